"""Ranked share of the three largest classes per client, averaged over clients and seeds."""
from _common import parser

from fedauxfdp.cli import partition_table
from fedauxfdp.config import ExperimentConfig
from fedauxfdp.synthetic import SyntheticSpec


def main():
    p = parser(__doc__, repeats=50)
    p.add_argument("--per-class", type=int, default=500)
    args = p.parse_args()
    config = ExperimentConfig(master_seed=args.seed, repeats=args.repeats,
                              dataset=SyntheticSpec(per_class=args.per_class, aux_size=2))
    rows = partition_table(config, 3)
    print(f"{'rank':<8s}" + "".join(f"alpha={r['alpha']:<9g}" for r in rows))
    for k, name in enumerate(("first", "second", "third")):
        print(f"{name:<8s}" + "".join(f"{100 * r['mean'][k]:5.1f}%{'':9s}" for r in rows))


if __name__ == "__main__":
    main()
