"""Command-line surface: fit, predict, simulate, calibrate-psi, diagnose.

The run configuration is a single JSON document (schema in the README).  All
artifacts are plain CSV/JSON: draws are stored long-format (iteration, chain,
parameter, value) with one file per parameter block, and every fit writes a
manifest (config echo + seed + versions) that can itself be passed back to
``fit --config`` to reproduce the run.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import contextlib
import json
import math
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .mcmc import ChainOutput, InitializationError, KernelConfig, run_chains
from .model import (
    CENS_INTERVAL,
    CENS_LEFT,
    CENS_NONE,
    CENS_RIGHT,
    LikelihoodError,
    ModelConfig,
    build_model,
)
from .posterior import (
    _parameter_chains,
    diagnostics_report,
    predictive_cdf,
    predictive_pdf,
    predictive_quantile,
    stack_chains,
    summarize,
)
from .predictor import TermSpec, build_term
from .priors import QuadratureError, prior_predictive_tv
from .simlab import SCENARIO_KINDS, DataScenario, simulate_dataset
from .splinecore import DomainError, GeometryError
from .transform import InverseConvergenceError, make_config

__all__ = ["main", "ConfigError", "DataError", "RunConfig", "load_config"]

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    """Invalid run configuration; message carries the offending field path."""


class DataError(Exception):
    """Unreadable or inconsistent data / artifact files."""


_NUMERIC_ERRORS = (
    LikelihoodError,
    InitializationError,
    InverseConvergenceError,
    QuadratureError,
    DomainError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


@contextlib.contextmanager
def _exit_codes():
    try:
        yield
    except (ConfigError, GeometryError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    except DataError as err:
        click.echo(f"data error: {err}", err=True)
        sys.exit(EXIT_DATA)
    except _NUMERIC_ERRORS as err:
        click.echo(f"numeric failure: {err}", err=True)
        sys.exit(EXIT_NUMERIC)


# ---------------------------------------------------------------------------
# Run configuration


_CENSOR_CODES = {
    "none": CENS_NONE,
    "left": CENS_LEFT,
    "right": CENS_RIGHT,
    "interval": CENS_INTERVAL,
}
_LAMBDA_MODES = ("proportional", "fixed", "identity", "linear")


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with all defaults resolved."""

    data: str
    response: str
    output: str
    location: tuple[TermSpec, ...] = ()
    scale: tuple[TermSpec, ...] = ()
    censor_status: str | None = None
    censor_upper: str | None = None
    a: float = -4.0
    b: float = 4.0
    n_bases: int = 31
    lambda_mode: str = "proportional"
    lam: float | None = None
    psi: float = 0.5
    ig_a: float = 1.0
    ig_b: float = 0.001
    mcmc: KernelConfig = field(default_factory=KernelConfig)

    def resolved_lambda(self) -> float | None:
        """Transition width handed to the transformation builder.

        None defers to the default 0.1(b - a); 0 and inf are the exact
        identity-tail / linear-tail modes.
        """
        if self.lambda_mode == "proportional":
            return None
        if self.lambda_mode == "identity":
            return 0.0
        if self.lambda_mode == "linear":
            return math.inf
        return self.lam


def _expect(doc: dict, key: str, path: str, kind, required: bool = False, default=None):
    if key not in doc or doc[key] is None:
        if required:
            raise ConfigError(f"{path}{key}: required field is missing")
        return default
    val = doc[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kind) or isinstance(val, bool):
        raise ConfigError(f"{path}{key}: expected {kind.__name__}, got {type(val).__name__}")
    return val


def _parse_terms(items, path: str) -> tuple[TermSpec, ...]:
    if not isinstance(items, list):
        raise ConfigError(f"{path}: expected a list of term objects")
    terms = []
    for i, item in enumerate(items):
        p = f"{path}[{i}]."
        if not isinstance(item, dict):
            raise ConfigError(f"{path}[{i}]: expected a term object")
        kwargs = {
            "name": _expect(item, "name", p, str, required=True),
            "kind": _expect(item, "kind", p, str, required=True),
            "covariate": _expect(item, "covariate", p, str, required=True),
        }
        n_bases = _expect(item, "n_bases", p, int)
        if n_bases is not None:
            kwargs["n_bases"] = n_bases
        unknown = set(item) - {"name", "kind", "covariate", "n_bases"}
        if unknown:
            raise ConfigError(f"{path}[{i}]: unknown fields {sorted(unknown)}")
        try:
            terms.append(TermSpec(**kwargs))
        except ValueError as err:
            raise ConfigError(f"{path}[{i}]: {err}") from err
    names = [t.name for t in terms]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: term names must be unique")
    return tuple(terms)


def config_from_doc(doc: dict, base: Path) -> RunConfig:
    """Validate a parsed JSON document (paths resolved against ``base``)."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a JSON object")
    if isinstance(doc.get("config"), dict):  # manifest round-trip
        doc = doc["config"]

    data = _expect(doc, "data", "", str, required=True)
    response = _expect(doc, "response", "", str, required=True)
    output = _expect(doc, "output", "", str, required=True)

    censor_status = censor_upper = None
    cens_doc = doc.get("censoring")
    if cens_doc is not None:
        if not isinstance(cens_doc, dict):
            raise ConfigError("censoring: expected an object")
        censor_status = _expect(cens_doc, "status", "censoring.", str, required=True)
        censor_upper = _expect(cens_doc, "upper", "censoring.", str)

    tdoc = doc.get("transform", {})
    if not isinstance(tdoc, dict):
        raise ConfigError("transform: expected an object")
    a = _expect(tdoc, "a", "transform.", float, default=-4.0)
    b = _expect(tdoc, "b", "transform.", float, default=4.0)
    n_bases = _expect(tdoc, "J", "transform.", int, default=31)
    lambda_mode = _expect(tdoc, "lambda_mode", "transform.", str, default="proportional")
    if lambda_mode not in _LAMBDA_MODES:
        raise ConfigError(f"transform.lambda_mode: must be one of {_LAMBDA_MODES}")
    lam = _expect(tdoc, "lambda", "transform.", float)
    if lambda_mode == "fixed":
        if lam is None or not (lam > 0.0 and math.isfinite(lam)):
            raise ConfigError("transform.lambda: fixed mode needs a finite positive value")
    elif lam is not None:
        raise ConfigError(f"transform.lambda: only valid with lambda_mode 'fixed'")

    pdoc = doc.get("prior", {})
    if not isinstance(pdoc, dict):
        raise ConfigError("prior: expected an object")
    psi = _expect(pdoc, "psi", "prior.", float, default=0.5)
    ig_a = _expect(pdoc, "ig_a", "prior.", float, default=1.0)
    ig_b = _expect(pdoc, "ig_b", "prior.", float, default=0.001)
    if psi <= 0.0 or ig_a <= 0.0 or ig_b <= 0.0:
        raise ConfigError("prior: psi, ig_a and ig_b must be positive")

    mdoc = doc.get("mcmc", {})
    if not isinstance(mdoc, dict):
        raise ConfigError("mcmc: expected an object")
    kernel_fields = {f for f in KernelConfig.__dataclass_fields__}
    unknown = set(mdoc) - kernel_fields
    if unknown:
        raise ConfigError(f"mcmc: unknown fields {sorted(unknown)}")
    try:
        mcmc = KernelConfig(**mdoc)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"mcmc: {err}") from err

    cfg = RunConfig(
        data=str((base / data).resolve()) if not Path(data).is_absolute() else data,
        response=response,
        output=str((base / output).resolve()) if not Path(output).is_absolute() else output,
        location=_parse_terms(doc.get("location", []), "location"),
        scale=_parse_terms(doc.get("scale", []), "scale"),
        censor_status=censor_status,
        censor_upper=censor_upper,
        a=a,
        b=b,
        n_bases=n_bases,
        lambda_mode=lambda_mode,
        lam=lam,
        psi=psi,
        ig_a=ig_a,
        ig_b=ig_b,
        mcmc=mcmc,
    )
    known = {
        "config",
        "data",
        "response",
        "output",
        "censoring",
        "location",
        "scale",
        "transform",
        "prior",
        "mcmc",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"top level: unknown fields {sorted(unknown)}")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from err
    return config_from_doc(doc, base=path.parent)


def config_doc(cfg: RunConfig) -> dict:
    """JSON form of a config; feeding it back to ``fit`` reproduces the run."""
    doc = {
        "data": cfg.data,
        "response": cfg.response,
        "output": cfg.output,
        "location": [
            {"name": t.name, "kind": t.kind, "covariate": t.covariate, "n_bases": t.n_bases}
            for t in cfg.location
        ],
        "scale": [
            {"name": t.name, "kind": t.kind, "covariate": t.covariate, "n_bases": t.n_bases}
            for t in cfg.scale
        ],
        "transform": {
            "a": cfg.a,
            "b": cfg.b,
            "J": cfg.n_bases,
            "lambda_mode": cfg.lambda_mode,
            "lambda": cfg.lam,
        },
        "prior": {"psi": cfg.psi, "ig_a": cfg.ig_a, "ig_b": cfg.ig_b},
        "mcmc": {name: getattr(cfg.mcmc, name) for name in KernelConfig.__dataclass_fields__},
    }
    if cfg.censor_status is not None:
        doc["censoring"] = {"status": cfg.censor_status, "upper": cfg.censor_upper}
    return doc


# ---------------------------------------------------------------------------
# Data ingestion


def _numeric_column(frame: pd.DataFrame, name: str) -> np.ndarray:
    vals = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
    raw = frame[name].to_numpy()
    bad = np.nonzero(np.isnan(vals) & ~pd.isna(raw))[0]
    if bad.size:
        # +2: one for the header row, one for 1-based numbering.
        raise DataError(f"column {name!r}: non-numeric value at line {bad[0] + 2}")
    return vals


def load_dataset(cfg: RunConfig):
    """Read the training CSV and return (columns dict, y, cens, y2)."""
    path = Path(cfg.data)
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as err:
        raise DataError(f"data file not found: {path}") from err
    except pd.errors.ParserError as err:
        raise DataError(f"{path}: {err}") from err
    if frame.shape[0] == 0:
        raise DataError(f"{path}: no data rows")

    needed = {cfg.response: "response"}
    for side, terms in (("location", cfg.location), ("scale", cfg.scale)):
        for i, t in enumerate(terms):
            needed.setdefault(t.covariate, f"{side}[{i}].covariate")
    if cfg.censor_status is not None:
        needed.setdefault(cfg.censor_status, "censoring.status")
        if cfg.censor_upper is not None:
            needed.setdefault(cfg.censor_upper, "censoring.upper")
    for col, origin in needed.items():
        if col not in frame.columns:
            raise DataError(f"column {col!r} (from {origin}) not found in {path}")

    categorical = {
        t.covariate for t in (*cfg.location, *cfg.scale) if t.kind == "random_intercept"
    }
    columns: dict[str, np.ndarray] = {}
    for col in frame.columns:
        if col in categorical:
            columns[col] = frame[col].to_numpy()
        else:
            columns[col] = _numeric_column(frame, col)

    y = columns[cfg.response]
    cens = y2 = None
    if cfg.censor_status is not None:
        raw = frame[cfg.censor_status]
        codes = np.empty(len(raw), dtype=np.intp)
        for i, v in enumerate(raw):
            if isinstance(v, str) and v.lower() in _CENSOR_CODES:
                codes[i] = _CENSOR_CODES[v.lower()]
            elif v in (0, 1, 2, 3):
                codes[i] = int(v)
            else:
                raise DataError(
                    f"column {cfg.censor_status!r}: invalid censor code {v!r} at line {i + 2}"
                )
        cens = codes
        if np.any(codes == CENS_INTERVAL):
            if cfg.censor_upper is None:
                raise DataError("interval-censored rows need censoring.upper")
            y2 = columns[cfg.censor_upper]
    return columns, y, cens, y2


def _build_fit_model(cfg: RunConfig, columns, y, cens, y2):
    tconfig = make_config(a=cfg.a, b=cfg.b, n_bases=cfg.n_bases, lam=cfg.resolved_lambda())
    try:
        loc_terms = tuple(build_term(spec, columns) for spec in cfg.location)
        scale_terms = tuple(build_term(spec, columns) for spec in cfg.scale)
        return build_model(
            y,
            tconfig,
            loc_terms=loc_terms,
            scale_terms=scale_terms,
            config=ModelConfig(psi=cfg.psi, ig_a=cfg.ig_a, ig_b=cfg.ig_b),
            cens=cens,
            y2=y2,
        )
    except ValueError as err:
        raise DataError(str(err)) from err


# ---------------------------------------------------------------------------
# Draw persistence (long CSV, one file per parameter block)


def _block_file(key: str) -> str:
    return f"draws_{key.replace(':', '_')}.csv"


def _write_draws(out_dir: Path, outputs: list[ChainOutput]) -> None:
    for key in outputs[0].draws:
        pieces = []
        for c, out in enumerate(outputs):
            arr = np.asarray(out.draws[key])
            mat = arr[:, None] if arr.ndim == 1 else arr
            names = [key] if arr.ndim == 1 else [f"{key}[{j}]" for j in range(mat.shape[1])]
            for j, pname in enumerate(names):
                pieces.append(
                    pd.DataFrame(
                        {
                            "iteration": np.arange(mat.shape[0]),
                            "chain": c,
                            "parameter": pname,
                            "value": mat[:, j],
                        }
                    )
                )
        pd.concat(pieces, ignore_index=True).to_csv(out_dir / _block_file(key), index=False)


_VEC_RE = re.compile(r"^(.*)\[(\d+)\]$")


def _read_chain_outputs(fit_dir: Path) -> list[ChainOutput]:
    """Rebuild per-chain draw dicts from the stored long-format CSVs."""
    files = sorted(fit_dir.glob("draws_*.csv"))
    if not files:
        raise DataError(f"no draws files found in {fit_dir}")
    frame = pd.concat([pd.read_csv(f) for f in files], ignore_index=True)
    for col in ("iteration", "chain", "parameter", "value"):
        if col not in frame.columns:
            raise DataError(f"draws files lack required column {col!r}")
    outputs = []
    for c in sorted(frame["chain"].unique()):
        sub = frame[frame["chain"] == c]
        scalars: dict[str, np.ndarray] = {}
        vectors: dict[str, dict[int, np.ndarray]] = {}
        for pname, grp in sub.groupby("parameter", sort=False):
            vals = grp.sort_values("iteration")["value"].to_numpy(dtype=float)
            m = _VEC_RE.match(str(pname))
            if m:
                vectors.setdefault(m.group(1), {})[int(m.group(2))] = vals
            else:
                scalars[str(pname)] = vals
        draws: dict[str, np.ndarray] = dict(scalars)
        for key, cols in vectors.items():
            if sorted(cols) != list(range(len(cols))):
                raise DataError(f"draws for block {key!r} have missing components")
            draws[key] = np.column_stack([cols[j] for j in range(len(cols))])
        outputs.append(
            ChainOutput(
                draws=draws,
                accept={},
                divergences=0,
                max_depth_hits=0,
                nan_accepts=0,
                eps={},
                mass_diag=np.empty(0),
            )
        )
    return outputs


def _versions() -> dict[str, str]:
    import importlib.metadata

    import scipy

    def dist(name: str) -> str:
        try:
            return importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:  # running from a checkout
            return "unknown"

    return {
        "python": sys.version.split()[0],
        "transreg": dist("transreg"),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "click": dist("click"),
    }


def _load_manifest(fit_dir: Path) -> RunConfig:
    manifest = fit_dir / "manifest.json"
    if not manifest.exists():
        raise DataError(f"missing artifact: {manifest}")
    return load_config(manifest)


# ---------------------------------------------------------------------------
# Commands


@click.group()
def main() -> None:
    """Bayesian penalized transformation regression."""


@main.command("fit")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run config JSON.")
@click.option("--seed", type=int, default=None, help="Override mcmc.seed.")
@click.option("--chains", type=int, default=None, help="Override mcmc.chains.")
@click.option("--out", type=click.Path(), default=None, help="Override the output directory.")
def cmd_fit(config_path, seed, chains, out):
    """Fit the model and write draws, diagnostics, and a manifest."""
    with _exit_codes():
        cfg = load_config(config_path)
        updates = {}
        if seed is not None:
            updates["seed"] = seed
        if chains is not None:
            updates["chains"] = chains
        if updates:
            try:
                cfg = replace(cfg, mcmc=replace(cfg.mcmc, **updates))
            except ValueError as err:
                raise ConfigError(f"mcmc: {err}") from err
        if out is not None:
            cfg = replace(cfg, output=str(Path(out).resolve()))

        columns, y, cens, y2 = load_dataset(cfg)
        model = _build_fit_model(cfg, columns, y, cens, y2)
        outputs = run_chains(model, cfg.mcmc)

        out_dir = Path(cfg.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_draws(out_dir, outputs)
        report = diagnostics_report(outputs)
        (out_dir / "diagnostics.json").write_text(json.dumps(report, indent=2) + "\n")
        manifest = {
            "config": config_doc(cfg),
            "seed": cfg.mcmc.seed,
            "versions": _versions(),
        }
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        click.echo(f"fit complete: {cfg.mcmc.chains} chains -> {out_dir}")


def _parse_values(raw: str | None, kind: str) -> np.ndarray:
    if raw is None:
        if kind == "quantile":
            return np.array([0.05, 0.25, 0.50, 0.75, 0.95])
        raise ConfigError("--values is required for cdf/pdf prediction")
    try:
        vals = np.array([float(v) for v in raw.split(",") if v.strip() != ""])
    except ValueError as err:
        raise ConfigError(f"--values: {err}") from err
    if vals.size == 0:
        raise ConfigError("--values: empty list")
    return vals


@main.command("predict")
@click.option("--fit-dir", required=True, type=click.Path(), help="Directory written by fit.")
@click.option("--data", "data_path", required=True, type=click.Path(), help="Request CSV.")
@click.option("--kind", required=True, type=click.Choice(["cdf", "pdf", "quantile"]))
@click.option("--values", default=None, help="Comma-separated y values (cdf/pdf) or levels (quantile).")
@click.option("--mass", default=0.90, show_default=True, help="Credible-interval mass.")
@click.option("--hpd", is_flag=True, help="Highest-density instead of equal-tailed intervals.")
@click.option("--out", required=True, type=click.Path(), help="Output CSV path.")
def cmd_predict(fit_dir, data_path, kind, values, mass, hpd, out):
    """Posterior predictive summaries (tidy CSV: row_id, y_or_u, mean, lo, hi)."""
    with _exit_codes():
        fit_dir = Path(fit_dir)
        cfg = _load_manifest(fit_dir)
        columns, y, cens, y2 = load_dataset(cfg)
        model = _build_fit_model(cfg, columns, y, cens, y2)
        samples = stack_chains(model, _read_chain_outputs(fit_dir))

        try:
            request = pd.read_csv(data_path)
        except FileNotFoundError as err:
            raise DataError(f"request file not found: {data_path}") from err
        except pd.errors.ParserError as err:
            raise DataError(f"{data_path}: {err}") from err
        req_cols: dict[str, np.ndarray] = {}
        for t in (*cfg.location, *cfg.scale):
            if t.covariate not in request.columns:
                raise DataError(f"request file lacks covariate column {t.covariate!r}")
            if t.kind == "random_intercept":
                req_cols[t.covariate] = request[t.covariate].to_numpy()
            else:
                req_cols[t.covariate] = _numeric_column(request, t.covariate)
        n_rows = request.shape[0]
        if not req_cols:
            req_cols["__rows__"] = np.zeros(n_rows)  # intercept-only: row count only

        vals = _parse_values(values, kind)
        fn = {"cdf": predictive_cdf, "pdf": predictive_pdf, "quantile": predictive_quantile}[kind]
        try:
            cube = fn(samples, req_cols, vals)
        except ValueError as err:
            raise ConfigError(f"--values: {err}") from err
        summ = summarize(cube, mass=mass, hpd=hpd)
        tidy = pd.DataFrame(
            {
                "row_id": np.repeat(np.arange(n_rows), vals.size),
                "y_or_u": np.tile(vals, n_rows),
                "mean": summ["mean"].reshape(-1),
                "lo": summ["lo"].reshape(-1),
                "hi": summ["hi"].reshape(-1),
            }
        )
        tidy.to_csv(out, index=False)
        click.echo(f"wrote {len(tidy)} rows -> {out}")


@main.command("simulate")
@click.option("--kind", required=True, type=click.Choice(list(SCENARIO_KINDS)))
@click.option("--n", required=True, type=int, help="Sample size.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--surface", default=None, type=click.IntRange(1, 4), help="Covariate surface 1..4.")
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
def cmd_simulate(kind, n, seed, surface, out):
    """Generate a standardized scenario dataset plus truth at the sample points."""
    with _exit_codes():
        try:
            scenario = DataScenario(kind=kind, n=n, seed=seed)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        frame, pdf, cdf = simulate_dataset(scenario, surface=surface)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        frame.drop(columns=["r"]).to_csv(out_dir / "data.csv", index=False)
        r = frame["r"].to_numpy()
        truth = pd.DataFrame({"r": r, "pdf": pdf(r), "cdf": cdf(r)})
        truth.to_csv(out_dir / "truth.csv", index=False)
        click.echo(f"wrote {len(frame)} rows -> {out_dir}")


@main.command("calibrate-psi")
@click.option("--psi", default="0.5", show_default=True, help="Comma-separated scale values.")
@click.option("--n-tau", default=100, show_default=True, type=int)
@click.option("--n-delta", default=100, show_default=True, type=int)
@click.option("--n-bases", default=31, show_default=True, type=int, help="Spline coefficients J.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(), help="Output CSV path.")
def cmd_calibrate_psi(psi, n_tau, n_delta, n_bases, seed, out):
    """Prior-predictive TV-distance quantiles for candidate psi values.

    Each psi reuses the same random numbers, so the quantile columns are
    directly comparable across rows.
    """
    with _exit_codes():
        try:
            psis = [float(v) for v in psi.split(",") if v.strip() != ""]
        except ValueError as err:
            raise ConfigError(f"--psi: {err}") from err
        if not psis or any(v <= 0.0 for v in psis):
            raise ConfigError("--psi: need positive values")
        if n_tau <= 0 or n_delta <= 0:
            raise ConfigError("--n-tau/--n-delta must be positive")
        tconfig = make_config(n_bases=n_bases)
        rows = []
        for value in psis:
            rng = np.random.default_rng(seed)
            tv = prior_predictive_tv(value, n_tau, n_delta, rng, tconfig)
            rows.append(
                {
                    "psi": value,
                    "n_tau": n_tau,
                    "n_delta": n_delta,
                    "q50": float(np.quantile(tv, 0.50)),
                    "q90": float(np.quantile(tv, 0.90)),
                    "q99": float(np.quantile(tv, 0.99)),
                }
            )
        pd.DataFrame(rows).to_csv(out, index=False)
        click.echo(f"wrote {len(rows)} rows -> {out}")


@main.command("diagnose")
@click.option("--fit-dir", required=True, type=click.Path(), help="Directory written by fit.")
@click.option("--json", "json_path", default=None, type=click.Path(), help="Also write JSON here.")
def cmd_diagnose(fit_dir, json_path):
    """Recompute convergence diagnostics from stored draws and print a table."""
    with _exit_codes():
        fit_dir = Path(fit_dir)
        outputs = _read_chain_outputs(fit_dir)
        chains = _parameter_chains(outputs)
        report = diagnostics_report(outputs)

        header = f"{'parameter':<28} {'rhat':>8} {'ess_bulk':>10} {'ess_tail':>10}"
        click.echo(header)
        click.echo("-" * len(header))
        for name in chains:
            row = report["parameters"][name]

            def _fmt(x, width, digits):
                return f"{'nan':>{width}}" if x is None else f"{x:>{width}.{digits}f}"

            click.echo(
                f"{name:<28} {_fmt(row['rhat'], 8, 4)} "
                f"{_fmt(row['ess_bulk'], 10, 1)} {_fmt(row['ess_tail'], 10, 1)}"
            )

        stored = fit_dir / "diagnostics.json"
        if stored.exists():
            notes = json.loads(stored.read_text())
            for key in ("acceptance", "divergences", "max_depth_hits", "nan_accepts"):
                if key in notes:
                    click.echo(f"{key}: {notes[key]}")
                    report[key] = notes[key]
        if json_path is not None:
            Path(json_path).write_text(json.dumps(report, indent=2) + "\n")
            click.echo(f"wrote {json_path}")


if __name__ == "__main__":
    main()
