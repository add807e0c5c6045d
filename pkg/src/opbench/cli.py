"""Command-line interface: dataset generation, training, inversion,
benchmark grids, report rendering, and a quick self-verification suite."""

from __future__ import annotations

import argparse
import ast
import configparser
import sys
import time
from pathlib import Path

import numpy as np

from . import bench, datagen, fdm, io as obio, nets
from .bench import ExperimentConfig, Report, emit_report, run_experiment, tikhonov_config
from .datagen import Problem, build_dataset
from .fields import GridField, rel_l2
from .inversion import inverse_metrics, tikhonov_invert

_PROBLEMS = {p.value: p for p in Problem}


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _split_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _split_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def load_config_file(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    exp = parser["experiment"] if parser.has_section("experiment") else {}
    overrides: dict = {}
    for section in parser.sections():
        if section == "experiment":
            continue
        overrides[section] = {k: _parse_value(v) for k, v in parser[section].items()}
    return ExperimentConfig(
        problem=_PROBLEMS[exp.get("problem", "poisson")],
        direction=exp.get("direction", "forward"),
        methods=tuple(exp.get("methods", "pcalin").replace(",", " ").split()),
        resolutions=_split_ints(exp.get("resolutions", "65")),
        noise_levels=_split_floats(exp.get("noise_levels", "0")),
        n_train=int(exp.get("n_train", 200)),
        n_test=int(exp.get("n_test", 50)),
        seed=int(exp.get("seed", 0)),
        profile=exp.get("profile", "desk"),
        overrides=overrides,
    )


def _cmd_gen(args) -> int:
    data = build_dataset(
        _PROBLEMS[args.problem], args.n, args.s, delta=args.noise, seed=args.seed
    )
    obio.save_dataset(args.out, data)
    print(f"wrote {args.n} samples at s={args.s} (noise {args.noise:g}) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    problem = _PROBLEMS[args.problem]
    if args.data:
        train = obio.load_dataset(args.data)
    else:
        train = build_dataset(problem, args.n_train, args.s, delta=args.noise, seed=bench.derived_seed(args.seed, 10))
    prof = bench._apply_overrides(
        bench.method_profile(args.method, problem, args.direction, args.profile), {}
    )
    t0 = time.perf_counter()
    if args.direction == "inverse_backward":
        from .inversion import train_backward
        from dataclasses import replace
        model = train_backward(args.method, train, train.delta, replace(prof.optim, seed=args.seed), **prof.extra)
    else:
        model = bench.train_forward_model(args.method, train, prof, args.seed)
    elapsed = time.perf_counter() - t0
    obio.save_model(args.out, model)
    print(f"trained {args.method} ({model.param_count} parameters) in {elapsed:.1f}s -> {args.out}")
    return 0


def _cmd_invert(args) -> int:
    model = obio.load_model(args.model)
    data = obio.load_dataset(args.data)
    method = getattr(model, "kind", type(model).__name__.replace("Model", "").lower())
    overrides = {}
    if args.steps:
        overrides["steps"] = args.steps
    if args.alpha1 is not None:
        overrides["alpha1"] = args.alpha1
    if args.alpha2 is not None:
        overrides["alpha2"] = args.alpha2
    cfg = tikhonov_config(method, data.problem, args.profile, **overrides)
    lines = ["sample,lambda_err,seg_acc,u_err,u_tilde_err"]
    count = min(args.limit, data.n) if args.limit else data.n
    for i in range(count):
        lam_hat = tikhonov_invert(model, data.u(i), cfg)
        rec = inverse_metrics(lam_hat, data.lam(i), data.u_clean(i), data.u(i), data.problem)
        seg = "" if rec.seg_accuracy_percent is None else f"{rec.seg_accuracy_percent:.2f}"
        lines.append(f"{i},{rec.rel_l2_error:.6f},{seg},{rec.u_err:.6f},{rec.u_tilde_err:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_bench(args) -> int:
    if args.config:
        config = load_config_file(args.config)
        if args.profile:
            config.profile = args.profile
        if args.seed is not None:
            config.seed = args.seed
    else:
        config = ExperimentConfig(
            problem=_PROBLEMS[args.problem],
            direction=args.direction,
            methods=tuple(args.methods.replace(",", " ").split()),
            resolutions=_split_ints(args.resolutions),
            noise_levels=_split_floats(args.noise_levels),
            n_train=args.n_train,
            n_test=args.n_test,
            seed=args.seed if args.seed is not None else 0,
            profile=args.profile or "desk",
        )
    report = run_experiment(config)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.csv").write_text(emit_report(report, "csv"))
    (outdir / "report.md").write_text(emit_report(report, "markdown"))
    print(emit_report(report, "markdown"))
    for row in report.rows:
        if row.error:
            print(f"FAILED cell {row.method}/s={row.s}/noise={row.noise}: {row.error}", file=sys.stderr)
    return 1 if report.failed else 0


def _cmd_report(args) -> int:
    report = bench.parse_report(Path(args.infile).read_text())
    text = emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_verify(args) -> int:
    checks: list[tuple[str, bool, str]] = []

    def record(name, ok, detail=""):
        checks.append((name, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")

    # second-order convergence of the source solver
    errs = {}
    for s in (65, 129):
        x = np.linspace(0, 1, s)
        xx, yy = np.meshgrid(x, x)
        lam = GridField(2 * np.pi**2 * np.sin(np.pi * xx) * np.sin(np.pi * yy))
        exact = GridField(np.sin(np.pi * xx) * np.sin(np.pi * yy))
        errs[s] = rel_l2(fdm.solve_poisson(lam), exact)
    ratio = errs[65] / errs[129]
    record("fdm-convergence", 3.5 <= ratio <= 4.5, f"ratio={ratio:.2f}")

    # diffusion solve with unit coefficient reduces to the source problem
    ones = GridField(np.ones((65, 65)))
    diff = np.max(np.abs(fdm.solve_darcy(ones).values - fdm.solve_poisson(ones).values))
    record("darcy-reduction", diff <= 1e-9, f"max diff={diff:.1e}")

    # gradient check on a small dense net
    rng = np.random.default_rng(0)
    net = nets.DenseNet.from_widths([3, 5, 2], "tanh")
    net.initialize("xavier", 1)
    xb, yb = rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    (pg, _) = nets.grad(net, xb, yb, "mse")
    w = net.weights[0]
    h = 1e-6
    w.data[0, 0] += h
    fp = float(nets.mse_loss(net(xb), yb).data)
    w.data[0, 0] -= 2 * h
    fm = float(nets.mse_loss(net(xb), yb).data)
    w.data[0, 0] += h
    fd = (fp - fm) / (2 * h)
    dev = abs(fd - pg[0][0][0, 0]) / max(abs(fd), 1e-12)
    record("autodiff-gradient", dev <= 1e-4, f"rel dev={dev:.1e}")

    # random-field law: variance of the constant mode
    draws = np.stack([datagen.sample_grf(65, datagen.sample_seed(1, 0, i)).values for i in range(500)])
    wq = np.ones(65)
    wq[0] = wq[-1] = 0.5
    wq /= 64
    c00 = np.einsum("nij,i,j->n", draws, wq, wq)
    rel_dev = abs(c00.var() - 1.0 / 81.0) * 81.0
    record("grf-constant-mode", rel_dev <= 0.15, f"rel dev={rel_dev:.3f}")

    # dataset determinism + persistence round trip
    d1 = build_dataset(Problem.POISSON, 3, 65, delta=0.05, seed=9)
    d2 = build_dataset(Problem.POISSON, 3, 65, delta=0.05, seed=9)
    same = np.array_equal(d1.solutions, d2.solutions) and np.array_equal(d1.lambdas, d2.lambdas)
    record("dataset-determinism", same)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.bin"
        obio.save_dataset(path, d1)
        d3 = obio.load_dataset(path)
        ok = np.array_equal(d1.solutions, d3.solutions) and np.array_equal(d1.lambdas, d3.lambdas)
    record("dataset-roundtrip", ok)

    return 0 if all(ok for _, ok, _ in checks) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="opbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset file")
    p.add_argument("--problem", choices=list(_PROBLEMS), default="poisson")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--s", type=int, default=65)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--problem", choices=list(_PROBLEMS), default="poisson")
    p.add_argument("--direction", choices=["forward", "inverse_backward"], default="forward")
    p.add_argument("--method", choices=list(bench.METHODS), required=True)
    p.add_argument("--profile", choices=["desk", "full"], default="desk")
    p.add_argument("--data", help="dataset file; generated on the fly if omitted")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--s", type=int, default=65)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("invert", help="Tikhonov inversion of a dataset through a trained forward model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--profile", choices=["desk", "full"], default="desk")
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--limit", type=int, help="invert only the first N samples")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("bench", help="run an experiment grid and write report.csv / report.md")
    p.add_argument("--config", help="INI config file; flags below are ignored when given except --profile/--seed")
    p.add_argument("--problem", choices=list(_PROBLEMS), default="poisson")
    p.add_argument("--direction", choices=list(bench.DIRECTIONS), default="forward")
    p.add_argument("--methods", default="pcalin")
    p.add_argument("--resolutions", default="65")
    p.add_argument("--noise-levels", dest="noise_levels", default="0")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--profile", choices=["desk", "full"])
    p.add_argument("--out", default="bench_out")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("report", help="re-render a report.csv")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=["csv", "markdown"], default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("verify", help="run the quick property suite")
    p.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
