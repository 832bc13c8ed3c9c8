"""FedAUXfdp against FedD+P and FedAVG+P at a total budget of (0.6, 2e-5)."""
from _common import parser, print_table, run

from fedauxfdp.config import ExperimentConfig


def main():
    args = parser(__doc__).parse_args()
    config = ExperimentConfig(master_seed=args.seed, repeats=args.repeats)
    result = run(config, args.out)
    print_table(result, lambda c: c["method"], "method", config.alpha)


if __name__ == "__main__":
    main()
