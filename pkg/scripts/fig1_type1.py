"""Type I error of clip variants and classical tests, univariate null scenario."""

from _sweep import parser, sweep, write

METHODS = ("clip_identity", "clip_random_intercept", "clip_true", "ols", "hc3",
           "cluster_sandwich")

if __name__ == "__main__":
    p = parser(__doc__, reps=1000, out="results/fig1_type1.csv")
    p.add_argument("--N", default="20,30,40,50", help="comma-separated cluster counts")
    args = p.parse_args()
    grid = [(f"N={N}", {"N": int(N)}) for N in args.N.split(",")]
    write(sweep(args, "u41", METHODS, grid), args.out)
