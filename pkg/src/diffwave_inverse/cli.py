"""Command line interface: ``python -m diffwave_inverse <command> ...``.

Commands
--------
``mlf-table``      Mittag-Leffler values on a log-spaced negative grid (CSV).
``forward``        ``u(., t)`` for one of the built-in examples (CSV).
``invert``         one regularized reconstruction (JSON).
``bench run``      noise sweep of an example (CSV + JSON per table).
``bench sweep-alpha`` / ``bench sweep-t2``
                   one row per fractional order / final time.
``bench reproduce-paper``
                   all five reference tables plus a comparison summary.

Every ``bench`` command accepts ``--config FILE`` (YAML or JSON mapping whose
keys are the long option names with dashes replaced by underscores); flags
given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from diffwave_inverse.bench import (
    FIXTURES,
    REFERENCE_TABLES,
    ExperimentSpec,
    reference_delta,
    reproduce_tables,
    run_example,
    sweep_alpha,
    sweep_T2,
    write_csv,
    write_outputs,
)
from diffwave_inverse.errors import DiffwaveError
from diffwave_inverse.forward import ProblemSetup, add_noise, exact_measurements, solve_direct
from diffwave_inverse.inverse import RegConfig, alternating_regularized, choose_mu, relative_error
from diffwave_inverse.mlf import mittag_leffler
from diffwave_inverse.spectral import Domain, build_eigensystem, field_to_csv, project_function

logger = logging.getLogger("diffwave_inverse")


def _floats(text: str) -> list[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# {{{ mlf-table


def cmd_mlf_table(args: argparse.Namespace) -> int:
    x = np.logspace(np.log10(args.xmin), np.log10(args.xmax), args.n)
    values = mittag_leffler(-x, args.alpha, args.beta)
    lines = ["z,value"] + [f"{-float(xi)!r},{float(v)!r}" for xi, v in zip(x, values)]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# }}}


# {{{ forward


def cmd_forward(args: argparse.Namespace) -> int:
    fx = FIXTURES[args.example]
    alpha = args.alpha if args.alpha is not None else fx.defaults["alpha"]
    domain = Domain(fx.dim, args.K)
    eig = build_eigensystem(domain, args.variant)
    a, f = project_function(fx.a_fn, domain), project_function(fx.f_fn, domain)
    # T1/T2 are irrelevant for a direct solve; pass a valid pair around t
    setup = ProblemSetup(alpha, args.t, 2 * args.t, eig, a, f)
    _emit(field_to_csv(solve_direct(setup, args.t)), args.out)
    return 0


# }}}


# {{{ invert


def cmd_invert(args: argparse.Namespace) -> int:
    overrides = {"alpha": args.alpha, "variant": args.variant, "T2": args.T2, "T1": args.T1,
                 "d_target": args.d, "K": args.K, "eps_list": (args.eps,)}
    spec = ExperimentSpec.for_example(args.example, **overrides)
    a_fn, f_fn = spec.functions

    K = spec.grid_size(reference_delta(spec, args.eps))
    domain = Domain(spec.dim, K)
    eig = build_eigensystem(domain, spec.variant)
    setup = ProblemSetup(spec.alpha, spec.t1, spec.T2, eig,
                         project_function(a_fn, domain), project_function(f_fn, domain))
    g1, g2 = exact_measurements(spec.alpha, spec.t1, spec.T2, domain, a_fn, f_fn,
                                spec.data_grid_factor)
    n1, n2, delta, _ = add_noise(g1, g2, args.eps, args.seed)

    if args.mu is not None:
        mu = args.mu
    elif args.auto_mu:
        mu = choose_mu(delta, args.p, args.c)
    else:
        mu = spec.regularization(delta)

    config = RegConfig(mu=mu, k_max=args.kmax, stop_tol=args.tol, mode=args.mode,
                       smoothness_p=args.p)
    run = alternating_regularized(n1, n2, setup, config)
    payload = run.to_dict()
    assert setup.a is not None and setup.f is not None
    payload["problem"] = {
        "example": args.example, "alpha": spec.alpha, "T1": spec.t1, "T2": spec.T2,
        "variant": spec.variant.value, "K": K, "eps": args.eps, "seed": args.seed,
        "delta": delta,
        "re_a": relative_error(run.a_rec, setup.a), "re_f": relative_error(run.f_rec, setup.f),
    }
    _emit(json.dumps(payload, indent=args.indent) + "\n", args.out)
    return 0


# }}}


# {{{ bench


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise SystemExit(f"config file {path} must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _pick(args: argparse.Namespace, config: dict[str, Any], key: str) -> Any:
    value = getattr(args, key, None)
    return value if value is not None else config.get(key)


def _as_list(value: Any) -> list[float] | None:
    if value is None:
        return None
    if isinstance(value, str):
        return _floats(value)
    if isinstance(value, (int, float)):
        return [float(value)]
    return [float(v) for v in value]


def _bench_spec(args: argparse.Namespace, config: dict[str, Any]) -> ExperimentSpec:
    example = _pick(args, config, "example") or "ex1"
    seeds = _pick(args, config, "seeds")
    eps = _as_list(_pick(args, config, "eps"))
    overrides = {
        "alpha": _pick(args, config, "alpha"),
        "T2": _pick(args, config, "T2"),
        "T1": _pick(args, config, "T1"),
        "d_target": _pick(args, config, "d"),
        "variant": _pick(args, config, "variant"),
        "K": _pick(args, config, "K"),
        "mode": _pick(args, config, "mode"),
        "eps_list": tuple(eps) if eps else None,
        "seeds": tuple(range(int(seeds))) if seeds is not None else None,
    }
    mu_c, mu_e = _pick(args, config, "mu_c"), _pick(args, config, "mu_exp")
    if mu_c is not None or mu_e is not None:
        default = FIXTURES[example].defaults["mu_rule"]
        overrides["mu_rule"] = (mu_c if mu_c is not None else default[0],
                                mu_e if mu_e is not None else default[1])
    return ExperimentSpec.for_example(example, **overrides)


def _bench_common(args: argparse.Namespace) -> tuple[dict[str, Any], Path, bool, int | None]:
    config = _load_config(args.config)
    out = Path(_pick(args, config, "out") or "results")
    timings = not (args.no_timings or bool(config.get("no_timings", False)))
    threads = _pick(args, config, "threads")
    return config, out, timings, threads


def cmd_bench_run(args: argparse.Namespace) -> int:
    config, out, timings, threads = _bench_common(args)
    spec = _bench_spec(args, config)
    rows = run_example(spec, threads=threads, keep_runs=True)
    name = _pick(args, config, "name") or f"{spec.example}_{spec.variant.value}"
    write_outputs(name, spec, rows, out, timings=timings, fields=args.fields)
    sys.stdout.write(write_csv(rows, timings=timings))
    return 0


def cmd_bench_sweep_alpha(args: argparse.Namespace) -> int:
    config, out, timings, threads = _bench_common(args)
    config.setdefault("example", "ex3")
    spec = _bench_spec(args, config)
    alphas = _as_list(_pick(args, config, "alphas")) or sorted(REFERENCE_TABLES["table4"])
    rows = sweep_alpha(spec, alphas, threads=threads, keep_runs=True)
    name = _pick(args, config, "name") or f"{spec.example}_alpha_sweep"
    write_outputs(name, spec, rows, out, timings=timings, lead="alpha", fields=args.fields)
    sys.stdout.write(write_csv(rows, timings=timings, lead="alpha"))
    return 0


def cmd_bench_sweep_t2(args: argparse.Namespace) -> int:
    config, out, timings, threads = _bench_common(args)
    config.setdefault("example", "ex3")
    config.setdefault("alpha", 1.5)
    spec = _bench_spec(args, config)
    t2s = _as_list(_pick(args, config, "t2_list")) or sorted(REFERENCE_TABLES["table5"])
    rows = sweep_T2(spec, t2s, threads=threads, keep_runs=True)
    name = _pick(args, config, "name") or f"{spec.example}_T2_sweep"
    write_outputs(name, spec, rows, out, timings=timings, lead="T2", fields=args.fields)
    sys.stdout.write(write_csv(rows, timings=timings, lead="T2"))
    return 0


def cmd_bench_reproduce(args: argparse.Namespace) -> int:
    config, out, timings, threads = _bench_common(args)
    seeds = _pick(args, config, "seeds")
    summary = reproduce_tables(out, seeds=tuple(range(int(seeds or 10))), timings=timings,
                               threads=threads)
    for table, entries in summary.items():
        for entry in entries:
            key = next(iter(entry))
            sys.stdout.write(
                f"{table} {key}={entry[key]:g}: re_a {entry['re_a']:.4f} "
                f"(ref {entry['re_a_ref']:.4f}, x{entry['ratio_a']:.2f})  "
                f"re_f {entry['re_f']:.4f} (ref {entry['re_f_ref']:.4f}, x{entry['ratio_f']:.2f})\n"
            )
    return 0


# }}}


# {{{ parser


def _add_bench_options(p: argparse.ArgumentParser, *, sweep: bool = False) -> None:
    p.add_argument("--config", help="YAML/JSON file with default option values")
    p.add_argument("--example", choices=sorted(FIXTURES))
    p.add_argument("--variant", choices=["continuous", "galerkin", "lumped"])
    p.add_argument("--eps", help="comma-separated noise levels")
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--T2", type=float)
    p.add_argument("--T1", type=float, help="pin T1 instead of T2 * d**(1/alpha)")
    p.add_argument("--d", type=float, help="contraction target defining T1")
    p.add_argument("--K", type=int, help="fixed grid size instead of the h-rule")
    p.add_argument("--mu-c", type=float, help="constant of the mu rule")
    p.add_argument("--mu-exp", type=float, help="exponent of the mu rule")
    p.add_argument("--mode", choices=["iterate", "solve", "auto"])
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("--name", help="basename of the CSV/JSON outputs")
    p.add_argument("--threads", type=int, help="work pool size (default: BENCH_THREADS)")
    p.add_argument("--no-timings", action="store_true",
                   help="zero the time column so repeated runs are byte-identical")
    p.add_argument("--fields", action="store_true",
                   help="also write nodal CSVs of the reconstructions (first seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffwave-inverse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mlf-table", help="tabulate E_{alpha,beta}(-x) as CSV")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--xmin", type=float, default=1e-3)
    p.add_argument("--xmax", type=float, default=1e4)
    p.add_argument("-n", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mlf_table)

    p = sub.add_parser("forward", help="u(., t) of a built-in example as CSV")
    p.add_argument("--example", choices=sorted(FIXTURES), default="ex1")
    p.add_argument("--alpha", type=float)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--K", type=int, default=64)
    p.add_argument("--variant", choices=["continuous", "galerkin", "lumped"], default="continuous")
    p.add_argument("--out")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("invert", help="one regularized reconstruction as JSON")
    p.add_argument("--example", choices=sorted(FIXTURES), default="ex1")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mu", type=float, help="explicit regularization parameter")
    p.add_argument("--auto-mu", action="store_true", help="mu = c * delta**(1/(p+1))")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--variant", choices=["continuous", "galerkin", "lumped"])
    p.add_argument("--T2", type=float)
    p.add_argument("--T1", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--kmax", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--mode", choices=["iterate", "solve", "auto"], default="auto")
    p.add_argument("--indent", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_invert)

    bench = sub.add_parser("bench", help="experiment harness")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    p = bsub.add_parser("run", help="noise sweep of one example")
    _add_bench_options(p)
    p.set_defaults(func=cmd_bench_run)
    p = bsub.add_parser("sweep-alpha", help="one row per fractional order")
    _add_bench_options(p)
    p.add_argument("--alphas", help="comma-separated fractional orders")
    p.set_defaults(func=cmd_bench_sweep_alpha)
    p = bsub.add_parser("sweep-t2", help="one row per final time")
    _add_bench_options(p)
    p.add_argument("--t2-list", help="comma-separated final times")
    p.set_defaults(func=cmd_bench_sweep_t2)
    p = bsub.add_parser("reproduce-paper", help="all five reference tables")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--no-timings", action="store_true")
    p.set_defaults(func=cmd_bench_reproduce)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args))
    except DiffwaveError as exc:
        parser.exit(2, f"error: {exc}\n")
    return 1


# }}}
