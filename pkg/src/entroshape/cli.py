"""Command-line entry point: configs in, CSV/JSON artifacts out.

Subcommands map one-to-one onto the experiment drivers: grad-check,
train, noise-bench, imbalance, influence, entropy-curve, pca. Every
command reads a strict JSON config (unknown keys rejected), writes its
outputs plus a manifest recording the effective config hash, seed and
tool version, and is byte-for-byte reproducible given the same config
and seed.

Exit codes: 0 success, 1 config/IO error, 2 verification failure,
3 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .exceptions import ConfigurationError, DivergenceError, EntroshapeError, InputError
from .kernel import ErrorSet, load_error_csv, save_error_csv
from .losses import LossConfig, VARIANTS, VARIANT_TMEE, tmee_loss, weighted_tmee_loss
from .gradients import (
    finite_difference_oracle,
    influence_curve,
    tight_bulk,
    tmee_gradient,
    weighted_tmee_gradient,
)
from .analysis import pca_project, renyi_entropy_estimate
from .noise import NoiseSpec
from .trainer import (
    ARCHITECTURES,
    ARCH_LINEAR,
    TaskRecipe,
    TrainConfig,
    TrainReport,
    generate_tasks,
    make_policy,
    run_imbalance_sweep,
    run_noise_bench,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3

_TOP_KEYS = {
    "seed",
    "out",
    "loss",
    "task",
    "train",
    "noise",
    "bench",
    "sweep",
    "grad_check",
    "influence",
    "entropy_curve",
    "pca",
}


def _fmt(value: float) -> str:
    """Shortest round-trip float representation (stable across runs)."""
    return repr(float(value))


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        fields = [
            str(v) if isinstance(v, (int, np.integer, str)) else _fmt(v) for v in row
        ]
        lines.append(",".join(fields))
    path.write_text("\n".join(lines) + "\n")


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    outputs: Dict[str, str] = {}
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            outputs[path.relative_to(out_dir).as_posix()] = _sha256_file(path)
    manifest = {
        "tool": "entroshape",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config_sha256": _config_hash({**config, "seed": seed}),
        "outputs": outputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _check_keys(section: dict, allowed: Sequence[str], where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigurationError("config root must be a JSON object")
    _check_keys(config, _TOP_KEYS, "config")
    return config


def _loss_config(config: dict) -> LossConfig:
    return LossConfig.from_dict(config.get("loss", {}))


def _noise_spec(config: dict, seed: int) -> NoiseSpec:
    section = dict(config.get("noise", {}))
    section.setdefault("seed", seed + 90001)
    return NoiseSpec.from_dict(section)


_TRAIN_KEYS = (
    "steps",
    "learning_rate",
    "batch_size",
    "snapshot_every",
    "verify_every",
    "policy",
    "hidden",
)


def _train_setup(config: dict, seed: int):
    section = dict(config.get("train", {}))
    _check_keys(section, _TRAIN_KEYS, "train")
    policy_kind = section.pop("policy", ARCH_LINEAR)
    hidden = section.pop("hidden", 32)
    if policy_kind not in ARCHITECTURES:
        raise ConfigurationError(
            f"train.policy must be one of {ARCHITECTURES}, got {policy_kind!r}"
        )
    recipe = TaskRecipe.from_dict(config.get("task", {}))
    train_cfg = TrainConfig(
        loss=_loss_config(config),
        seed=seed,
        noise=_noise_spec(config, seed),
        **section,
    )
    return recipe, train_cfg, policy_kind, hidden


def save_run(out_dir: Path, report: TrainReport) -> None:
    """Write metrics.csv, snapshots/*.csv and summary.json for a run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(
        out_dir / "metrics.csv",
        ["step", "total", "mse", "entropy", "grad_norm"],
        report.metrics_rows(),
    )
    snap_dir = out_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for step, snap in report.snapshots:
        save_error_csv(snap, snap_dir / f"step_{step:07d}.csv")
    summary = {
        "activation_step": report.activation_step,
        "entropy_sigma": report.entropy_sigma,
        "final_clean_mse": report.final_clean_mse,
        "per_task_clean_mse": report.per_task_clean_mse,
        "final_entropy": float(report.entropy[-1]),
        "final_total": float(report.total[-1]),
        "seed": report.seed,
        "steps": int(report.steps.size),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def load_run_snapshots(run_dir: Path) -> List[tuple]:
    """Read (step, ErrorSet) pairs back from a run directory."""
    snap_dir = run_dir / "snapshots"
    if not snap_dir.is_dir():
        raise InputError(f"{run_dir} has no snapshots/ directory")
    pairs = []
    for path in sorted(snap_dir.glob("step_*.csv")):
        match = re.fullmatch(r"step_(\d+)\.csv", path.name)
        if not match:
            continue
        pairs.append((int(match.group(1)), load_error_csv(path)))
    if not pairs:
        raise InputError(f"{snap_dir} contains no snapshot files")
    return pairs


# ---------------------------------------------------------------------------
# commands

_GRAD_KEYS = (
    "instances",
    "max_samples",
    "max_dim",
    "sigmas",
    "variants",
    "tolerance_tmee",
    "tolerance_weighted",
    "fd_step",
    "invert_analytic_sign",
)


def cmd_grad_check(config: dict, out_dir: Path, seed: int) -> int:
    """Random-instance sweep of analytic gradients against the FD oracle."""
    section = dict(config.get("grad_check", {}))
    _check_keys(section, _GRAD_KEYS, "grad_check")
    instances = section.get("instances", 100)
    max_samples = section.get("max_samples", 64)
    max_dim = section.get("max_dim", 8)
    sigmas = section.get("sigmas", [0.5, 1.0, 2.0])
    variants = section.get("variants", list(VARIANTS))
    tol_tmee = section.get("tolerance_tmee", 1e-6)
    tol_weighted = section.get("tolerance_weighted", 1e-5)
    fd_step = section.get("fd_step", 1e-6)
    invert = bool(section.get("invert_analytic_sign", False))
    if instances < 1 or not sigmas or not variants:
        raise ConfigurationError("grad_check grid is empty")
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigurationError(f"unknown variants {bad}; valid: {VARIANTS}")

    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    failures = 0
    for index in range(instances):
        n = int(rng.integers(2, max_samples + 1))
        d = int(rng.integers(1, max_dim + 1))
        sigma = float(rng.choice(sigmas))
        variant = str(rng.choice(variants))
        # Sample scale tied to the bandwidth: when every pairwise kernel
        # underflows, the true gradient is ~1e-7 and the FD oracle's own
        # noise floor (eps/2h) swamps the comparison.
        scale = sigma * rng.uniform(0.2, 0.8) / np.sqrt(d)
        errors = ErrorSet(samples=rng.normal(0.0, scale, size=(n, d)))
        if variant == VARIANT_TMEE:
            analytic = tmee_gradient(errors, sigma)
            oracle = finite_difference_oracle(
                lambda e, s=sigma: tmee_loss(e, s), errors, h=fd_step
            )
            tol = tol_tmee
        else:
            cfg = LossConfig(sigma=sigma, variant=variant)
            analytic = weighted_tmee_gradient(errors, cfg)
            oracle = finite_difference_oracle(
                lambda e, c=cfg: weighted_tmee_loss(e, c), errors, h=fd_step
            )
            tol = tol_weighted
        grads = -analytic.grads if invert else analytic.grads
        rel = float(
            np.linalg.norm(grads - oracle.grads)
            / max(np.linalg.norm(oracle.grads), 1e-300)
        )
        ok = rel <= tol
        worst = max(worst, rel)
        rows.append((index, variant, n, d, sigma, rel, tol, int(ok)))
        if not ok and failures == 0:
            save_error_csv(errors, out_dir / "grad_check_offender.csv")
        failures += 0 if ok else 1

    write_csv(
        out_dir / "grad_check.csv",
        ["instance", "variant", "n", "dim", "sigma", "rel_error", "tolerance", "ok"],
        rows,
    )
    summary = {
        "instances": instances,
        "failures": failures,
        "worst_rel_error": worst,
    }
    (out_dir / "grad_check_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    if failures:
        print(
            f"grad-check: {failures}/{instances} instances exceeded tolerance "
            f"(worst {worst:.3e}); offender dumped to grad_check_offender.csv",
            file=sys.stderr,
        )
        return EXIT_VERIFY
    print(f"grad-check: {instances} instances ok (worst rel error {worst:.3e})")
    return EXIT_OK


def cmd_train(config: dict, out_dir: Path, seed: int) -> int:
    recipe, train_cfg, policy_kind, hidden = _train_setup(config, seed)
    batch = generate_tasks(recipe, seed)
    policy = make_policy(policy_kind, batch, hidden=hidden, seed=seed)
    _, report = train(batch, policy, train_cfg)
    save_run(out_dir, report)
    print(
        f"train: {train_cfg.steps} steps, final clean MSE {report.final_clean_mse:.6g}, "
        f"final entropy {report.entropy[-1]:.6g}"
    )
    return EXIT_OK


_BENCH_KEYS = ("seeds",)


def cmd_noise_bench(config: dict, out_dir: Path, seed: int) -> int:
    section = dict(config.get("bench", {}))
    _check_keys(section, _BENCH_KEYS, "bench")
    seeds = section.get("seeds", [seed + i for i in range(5)])
    recipe, train_cfg, policy_kind, _ = _train_setup(config, seed)
    if policy_kind != ARCH_LINEAR:
        raise ConfigurationError("noise bench uses the linear policy")
    report = run_noise_bench(recipe, train_cfg, seeds)
    write_csv(
        out_dir / "noise_bench.csv",
        ["seed", "clean_mse_baseline", "clean_mse_tmee"],
        report.rows,
    )
    summary = {
        "median_clean_mse_baseline": report.median_mse_only,
        "median_clean_mse_tmee": report.median_mse_tmee,
        "noise_kind": train_cfg.noise.kind,
        "alpha": train_cfg.loss.alpha,
    }
    (out_dir / "noise_bench_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    print(
        f"noise-bench[{train_cfg.noise.kind}]: median clean MSE "
        f"baseline {report.median_mse_only:.6g} vs entropy arm {report.median_mse_tmee:.6g}"
    )
    return EXIT_OK


_SWEEP_KEYS = ("ratios", "overlaps", "seeds")


def cmd_imbalance(config: dict, out_dir: Path, seed: int, threads: int = 1) -> int:
    section = dict(config.get("sweep", {}))
    _check_keys(section, _SWEEP_KEYS, "sweep")
    ratios = section.get("ratios", [1, 4, 10, 40])
    overlaps = section.get("overlaps", [0.4, 100.0])
    seeds = section.get("seeds", [seed + i for i in range(5)])
    recipe, train_cfg, _, _ = _train_setup(config, seed)
    cells = run_imbalance_sweep(ratios, overlaps, recipe, train_cfg, seeds, threads=threads)
    rows = []
    for cell in cells:
        for i, run_seed in enumerate(cell.seeds):
            rows.append(
                (
                    cell.ratio,
                    cell.overlap_delta,
                    run_seed,
                    cell.r_b[i],
                    cell.minority_mse[i],
                    cell.balanced_minority_mse[i],
                    cell.minority_mse[i] - cell.balanced_minority_mse[i],
                )
            )
    write_csv(
        out_dir / "imbalance.csv",
        ["ratio", "overlap_delta", "seed", "r_b", "minority_mse", "balanced_minority_mse", "delta"],
        rows,
    )
    summary = [
        {
            "ratio": cell.ratio,
            "overlap_delta": cell.overlap_delta,
            "median_r_b": cell.median_r_b,
            "median_delta": cell.median_delta,
        }
        for cell in cells
    ]
    (out_dir / "imbalance_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    for cell in cells:
        print(
            f"imbalance ratio={cell.ratio:g} overlap={cell.overlap_delta:g}: "
            f"median R_B {cell.median_r_b:.3g}, median minority delta {cell.median_delta:.3g}"
        )
    return EXIT_OK


_INFLUENCE_KEYS = (
    "sigma",
    "c_values",
    "c_min",
    "c_max",
    "c_step",
    "bulk_samples",
    "bulk_dim",
    "bulk_radius_factor",
    "bulk_seed",
)


def cmd_influence(config: dict, out_dir: Path, seed: int) -> int:
    section = dict(config.get("influence", {}))
    _check_keys(section, _INFLUENCE_KEYS, "influence")
    sigma = section.get("sigma", 0.5)
    if "c_values" in section:
        cs = [float(c) for c in section["c_values"]]
    else:
        c_min = section.get("c_min", 0.1)
        c_max = section.get("c_max", 10.0)
        c_step = section.get("c_step", 0.1)
        if c_step <= 0 or c_max < c_min:
            raise ConfigurationError("invalid c grid")
        count = int(round((c_max - c_min) / c_step)) + 1
        cs = [round(c_min + i * c_step, 12) for i in range(count)]
    bulk = tight_bulk(
        sigma,
        n_samples=section.get("bulk_samples", 16),
        dim=section.get("bulk_dim", 2),
        radius_factor=section.get("bulk_radius_factor", 0.01),
        seed=section.get("bulk_seed", 7),
    )
    points = influence_curve(bulk, cs, sigma)
    write_csv(
        out_dir / "influence.csv",
        ["c", "tmee_grad_norm", "mse_grad_norm", "envelope"],
        points,
    )
    peak = max(points, key=lambda p: p.tmee_grad_norm)
    print(f"influence: entropy gradient peaks at c={peak.c:g} (norm {peak.tmee_grad_norm:.4g})")
    return EXIT_OK


_CURVE_KEYS = ("run_dir", "sigma")


def cmd_entropy_curve(config: dict, out_dir: Path, seed: int) -> int:
    section = dict(config.get("entropy_curve", {}))
    _check_keys(section, _CURVE_KEYS, "entropy_curve")
    if "run_dir" not in section:
        raise ConfigurationError("entropy_curve.run_dir is required")
    run_dir = Path(section["run_dir"])
    sigma = section.get("sigma")
    if sigma is None:
        summary_path = run_dir / "summary.json"
        if not summary_path.is_file():
            raise ConfigurationError(
                "entropy_curve.sigma not given and run summary.json not found"
            )
        sigma = json.loads(summary_path.read_text())["entropy_sigma"]
    pairs = load_run_snapshots(run_dir)
    rows = [(step, renyi_entropy_estimate(snap, sigma)) for step, snap in pairs]
    write_csv(out_dir / "entropy_curve.csv", ["step", "entropy"], rows)
    print(f"entropy-curve: {len(rows)} snapshots from {run_dir}")
    return EXIT_OK


_PCA_KEYS = ("input_csv", "components")


def cmd_pca(config: dict, out_dir: Path, seed: int) -> int:
    section = dict(config.get("pca", {}))
    _check_keys(section, _PCA_KEYS, "pca")
    if "input_csv" not in section:
        raise ConfigurationError("pca.input_csv is required")
    errors = load_error_csv(Path(section["input_csv"]))
    components = section.get("components", 2)
    coords, fractions = pca_project(errors, components=components)
    write_csv(
        out_dir / "pca.csv",
        ["sample"] + [f"pc_{j}" for j in range(coords.shape[1])],
        [(i, *coords[i]) for i in range(coords.shape[0])],
    )
    summary = {"explained_variance_fractions": [float(f) for f in fractions]}
    (out_dir / "pca_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"pca: {coords.shape[0]} samples, fractions {[round(float(f), 4) for f in fractions]}")
    return EXIT_OK


_COMMANDS = {
    "grad-check": cmd_grad_check,
    "train": cmd_train,
    "noise-bench": cmd_noise_bench,
    "imbalance": cmd_imbalance,
    "influence": cmd_influence,
    "entropy-curve": cmd_entropy_curve,
    "pca": cmd_pca,
}


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; reserve 2 for
    # verification failures and report usage problems as config errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entroshape", description=__doc__)
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", help="output directory (overrides config 'out')")
    parser.add_argument("--seed", type=int, help="RNG seed (overrides config 'seed')")
    parser.add_argument(
        "--deterministic",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="fixed-order reductions and scheduling (default on)",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads; falls back to ENTROSHAPE_THREADS, then 1",
    )
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("ENTROSHAPE_THREADS", "1"))
    if threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        if seed < 0:
            raise ConfigurationError("seed must be a nonnegative integer")
        out = args.out or config.get("out")
        if out is None:
            raise ConfigurationError("an output directory is required (--out or config 'out')")
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        try:
            probe.write_text("")
        finally:
            if probe.exists():
                probe.unlink()
        if args.command == "imbalance":
            status = cmd_imbalance(config, out_dir, seed, threads=threads)
        else:
            status = _COMMANDS[args.command](config, out_dir, seed)
        write_manifest(out_dir, args.command, config, seed)
        return status
    except DivergenceError as exc:
        print(f"error: {exc} (diagnostics: {exc.diagnostics})", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigurationError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EntroshapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
