"""FedAUXfdp accuracy against the class-head regularization strength, with and without eps = 0.01."""
from _common import parser, print_table, run

from fedauxfdp.config import ExperimentConfig


def main():
    p = parser(__doc__)
    p.add_argument("--lambdas", type=float, nargs="+", default=[0.01, 0.1, 1.0])
    args = p.parse_args()
    config = ExperimentConfig(master_seed=args.seed, repeats=args.repeats, methods=("fedauxfdp",),
                              epsilon_class=(None, 0.01), lambda_class=tuple(args.lambdas))
    result = run(config, args.out)
    label = lambda c: f"lam={c['lambda']:g} eps={'none' if c['eps_class'] is None else c['eps_class']}"
    print_table(result, label, "setting", config.alpha)


if __name__ == "__main__":
    main()
