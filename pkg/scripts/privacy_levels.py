"""FedAUXfdp accuracy across class-head budgets, with the scoring budget held at (0.1, 1e-5)."""
import warnings

from _common import parser, print_table, run

from fedauxfdp.config import ExperimentConfig


def main():
    args = parser(__doc__).parse_args()
    config = ExperimentConfig(master_seed=args.seed, repeats=args.repeats, methods=("fedauxfdp",),
                              epsilon_class=(None, 1.0, 0.5, 0.1, 0.01))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run(config, args.out)
    print_table(result, lambda c: "none" if c["eps_class"] is None else c["eps_class"], "class eps", config.alpha)


if __name__ == "__main__":
    main()
