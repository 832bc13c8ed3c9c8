"""FedAUXfdp with a public pool drawn from the client distribution versus one drawn around foreign means."""
from dataclasses import replace

from _common import parser, print_table, run

from fedauxfdp.config import ExperimentConfig


def main():
    args = parser(__doc__).parse_args()
    base = ExperimentConfig(master_seed=args.seed, repeats=args.repeats, methods=("fedauxfdp",))
    for mode in ("matched", "mismatched"):
        config = replace(base, dataset=replace(base.dataset, aux_mode=mode))
        result = run(config, f"{args.out}/{mode}" if args.out else None)
        print_table(result, lambda c: mode, "public pool", config.alpha)


if __name__ == "__main__":
    main()
