"""Command line entry point: ``eivsparse {simulate,fit,generate,sensitivity,minimax}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import io as eio
from .errors import (ConfigError, DimensionError, EnumerationBudgetError, InfeasibleError,
                     NoFixedPointError, SolverError, UnboundedError)
from .minimax import (KlModel, family_kl, gamma_select, hypothesis_family, separation,
                      vg_packing)
from .model import TrueModel, ar1_covariance, generate_dgp, replication_seed
from .sensitivity import coherence, kappa
from .simulation import SimulationConfig, emit, run_monte_carlo

EXIT_OK, EXIT_PARSE, EXIT_SHAPE, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 2, 3, 4, 5

log = logging.getLogger("eivsparse")


def _write(out, payload: bytes):
    if out:
        Path(out).write_bytes(payload)
    else:
        sys.stdout.write(payload.decode())


def cmd_simulate(args):
    cfg = SimulationConfig.from_dict(eio.read_json(args.config))
    table = run_monte_carlo(cfg, workers=args.workers)
    _write(args.out, emit(table, args.format))
    for row in table.rows:
        if row.failed:
            log.warning("%s: %d of %d fits failed", row.label, row.failed, cfg.replications)
    return EXIT_OK


def cmd_fit(args):
    res = eio.fit_from_file(args.y, args.Z, args.config, X_path=args.X)
    _write(args.out, json.dumps(res.to_dict(), indent=1).encode())
    return EXIT_OK


def cmd_generate(args):
    cfg = SimulationConfig.from_dict(eio.read_json(args.config))
    model = TrueModel(theta_star=cfg.theta_star, sigma=cfg.sigma, sigma_star=cfg.sigma_star,
                      rho=cfg.rho, seed=replication_seed(cfg.base_seed, args.rep))
    paths = eio.write_dataset(args.out_dir, generate_dgp(model, cfg.n, cfg.p))
    print(json.dumps(paths))
    return EXIT_OK


def cmd_sensitivity(args):
    M = eio.read_matrix_csv(args.matrix)
    if args.design:
        M = M.T @ M / M.shape[0]
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"Gram matrix must be square, got {M.shape}; pass --design for X")
    if args.q == "coherence":
        report = {"q": "coherence", "value": coherence(M)}
    else:
        extra = {"restarts": args.restarts, "seed": args.seed} if args.q in ("2", "pr") else {}
        rep = kappa(M, args.s, args.u, args.q, **extra)
        report = rep.to_dict()
    _write(args.out, json.dumps(report, indent=1).encode())
    return EXIT_OK


def cmd_minimax(args):
    packing = vg_packing(args.p, args.s, seed=args.seed, c1_prime=args.c1)
    gamma = args.gamma if args.gamma else gamma_select(args.n, args.p, args.s, args.R,
                                                       args.c1, args.c2)
    fam = hypothesis_family(packing, args.R, gamma)
    model = KlModel(ar1_covariance(args.p, args.rho), args.sigma, args.sigma_star)
    kls = family_kl(model, fam, args.n)
    with open(args.out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j"] + [f"theta{k + 1}" for k in range(args.p)])
        for j, row in enumerate(fam.omega_bars):
            w.writerow([j] + [repr(float(v)) for v in row])
    report = {
        "p": args.p, "s": args.s, "n": args.n, "R": args.R, "gamma": gamma,
        "codewords": len(packing), "min_hamming": packing.min_pairwise_dist,
        "log_size": packing.log_size, "cardinality_target": packing.cardinality_target,
        "meets_target": packing.meets_target,
        "separation": [separation(fam, q) for q in ("1", "2", "inf")],
        "kl_max": float(kls.max()) if kls.size else 0.0,
        "kl_budget": packing.log_size / 16 if len(packing) else 0.0,
        **model.eigen_summary(),
    }
    _write(args.out_json, json.dumps(report, indent=1).encode())
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="eivsparse",
                                 description="Sparse errors-in-variables regression tools")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="Monte Carlo table")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: $EIVSPARSE_WORKERS or 1)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit one estimator to CSV data")
    sp.add_argument("--y", required=True)
    sp.add_argument("--Z", required=True)
    sp.add_argument("--X", help="true design, needed only for dantzig_x")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("generate", help="write one simulated replication as CSV")
    sp.add_argument("--config", required=True)
    sp.add_argument("--rep", type=int, default=0)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("sensitivity", help="sensitivity constants of a Gram matrix")
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--design", action="store_true", help="matrix is X; use X'X/n")
    sp.add_argument("--s", type=int, default=1)
    sp.add_argument("--u", type=float, default=1.0)
    sp.add_argument("--q", choices=("1", "2", "inf", "pr", "coherence"), default="1")
    sp.add_argument("--restarts", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("minimax", help="lower-bound hypothesis family and KL report")
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--R", type=float, default=1.0)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--c1", type=float, default=0.1)
    sp.add_argument("--c2", type=float, default=1.0)
    sp.add_argument("--sigma", type=float, default=0.128)
    sp.add_argument("--sigma-star", type=float, default=0.45)
    sp.add_argument("--rho", type=float, default=0.25)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-csv", required=True)
    sp.add_argument("--out-json")
    sp.set_defaults(func=cmd_minimax)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE
    except DimensionError as exc:
        log.error("%s", exc)
        return EXIT_SHAPE
    except (InfeasibleError, NoFixedPointError, UnboundedError) as exc:
        log.error("%s", exc)
        tau = getattr(exc, "suggested_tau", None)
        if tau is not None:
            log.error("suggested tau: %r", tau)
        return EXIT_INFEASIBLE
    except (SolverError, EnumerationBudgetError) as exc:
        log.error("%s", exc)
        return EXIT_SOLVER
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
