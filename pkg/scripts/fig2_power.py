"""Power at beta = 0.5 across cluster counts, univariate scenario."""

from _sweep import parser, sweep, write

METHODS = ("clip_identity", "clip_random_intercept", "clip_true", "cluster_sandwich")

if __name__ == "__main__":
    p = parser(__doc__, reps=1000, out="results/fig2_power.csv")
    p.add_argument("--N", default="20,30,40,50", help="comma-separated cluster counts")
    args = p.parse_args()
    grid = [(f"N={N}", {"N": int(N)}) for N in args.N.split(",")]
    write(sweep(args, "u41_power", METHODS, grid), args.out)
