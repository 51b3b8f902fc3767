"""FWER over the eight null outcomes and per-outcome power, ten correlated outcomes.

Rows with ``metric == "fwer"`` give the familywise error rate; rows named
``y9``/``y10`` give power for the two non-null outcomes.
"""

from _sweep import parser, sweep, write

METHODS = ("clip_identity", "clip_random_intercept", "clip_true", "hc3")

if __name__ == "__main__":
    p = parser(__doc__, reps=500, out="results/fig3_multivariate.csv")
    p.add_argument("--eps-sd", default="1,2,3,4,5", help="comma-separated error sds")
    args = p.parse_args()
    grid = [(f"eps_sd={s}", {"eps_sd": float(s)}) for s in args.eps_sd.split(",")]
    write(sweep(args, "m42", METHODS, grid), args.out)
