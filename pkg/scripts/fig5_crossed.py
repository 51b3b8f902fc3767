"""Type I error and power with crossed participant/item effects (items as outcomes)."""

from _sweep import parser, sweep, write

METHODS = ("clip_identity", "clip_random_intercept", "clip_true")

if __name__ == "__main__":
    p = parser(__doc__, reps=500, out="results/fig5_crossed.csv")
    p.add_argument("--N", default="10,20,30", help="comma-separated participant counts")
    p.add_argument("--beta", type=float, default=0.0, help="common effect across items")
    args = p.parse_args()
    grid = [(f"N={N},beta={args.beta:g}", {"N": int(N), "beta": (args.beta,)})
            for N in args.N.split(",")]
    write(sweep(args, "x43", METHODS, grid), args.out)
