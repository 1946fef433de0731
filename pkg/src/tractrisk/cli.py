"""File-based command line front end.

Every subcommand reads one :class:`RunConfig`, assembled from defaults, an
optional ``key = value`` config file and command-line flags (flags win).
Outputs land in ``<outdir>/<run_id>/`` next to a ``manifest.json`` holding
the config, its hash, the seed and sha256 checksums of every output file.
Nothing written depends on wall-clock time, so identical configs give
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from scipy.special import expit

from . import data as dm
from . import inference, rebalance, risk
from .geometry import (TractGeometry, graph_from_geojson, grid_feature_collection, grid_graph,
                       load_geojson)
from .graph import prune_cohort_graph, read_edge_csv, write_edge_csv
from .polyagamma import RandomStream
from .sampler import McmcConfig, ModelSpec, PosteriorSamples, fit

logger = logging.getLogger(__name__)

COMMANDS = ("simulate", "fit", "diagnose", "risk", "compare", "rebalance")

# RNG substream ids, one per consumer of the run seed
_STREAM_SIMULATE = 1000
_STREAM_SMOTE = 1001
_STREAM_KMEANS = 1002


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _str_list(s):
    if isinstance(s, (list, tuple)):
        return [str(x) for x in s]
    s = str(s).strip()
    if s in ("", "none"):
        return []
    return [x.strip() for x in s.split(",") if x.strip()]


def _int_list(s):
    return [int(x) for x in _str_list(s)]


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _coef_map(s):
    if isinstance(s, dict):
        return {str(k): float(v) for k, v in s.items()}
    out = {}
    for item in _str_list(s):
        k, _, v = item.partition("=")
        out[k.strip()] = float(v)
    return out


def _opt_float(s):
    return None if s is None or str(s).strip().lower() in ("", "none") else float(s)


def _opt_str(s):
    return None if s is None or str(s).strip() in ("", "none") else str(s)


def _f(default, parse, help):
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda d=default: type(d)(d),
                     metadata={"parse": parse, "help": help})
    return field(default=default, metadata={"parse": parse, "help": help})


@dataclass
class RunConfig:
    # inputs and outputs
    deliveries: str | None = _f(None, _opt_str, "deliveries CSV")
    covariates: str | None = _f(None, _opt_str, "tract-year covariates CSV")
    adjacency: str | None = _f(None, _opt_str, "edge-list CSV with header src,dst")
    geojson: str | None = _f(None, _opt_str, "tract polygons (FeatureCollection)")
    id_property: str | None = _f(None, _opt_str, "GeoJSON property holding the tract id")
    contiguity: str = _f("queen", str, "adjacency rule for GeoJSON input: rook or queen")
    outdir: str = _f("runs", str, "output root directory")
    run_id: str | None = _f(None, _opt_str, "output subdirectory (default: config hash prefix)")
    fit_dirs: list = _f([], _str_list, "fit output directories (risk: one, compare: two)")
    # data handling
    columns: list | None = _f(None, _str_list, "design columns, comma separated; none for intercept only")
    standardize: bool = _f(True, _bool, "centre and scale continuous covariates")
    min_count: int = _f(0, int, "prune tracts with fewer deliveries in any year")
    validation_years: list = _f([], _int_list, "years held out for validation")
    # model and MCMC
    model_kind: str = _f("CAR", str, "CAR or indRE")
    n_iterations: int = _f(5500, int, "iterations per chain")
    burn_in: int = _f(500, int, "iterations discarded per chain")
    thin: int = _f(10, int, "keep every thin-th iteration")
    n_chains: int = _f(2, int, "number of chains")
    xi: float = _f(5.0, float, "concentration of the rho proposal")
    seed: int = _f(0, int, "master seed for every random stream")
    n_jobs: int = _f(0, int, "parallel chains (0: min(n_chains, cpus))")
    # imbalance corrections
    weight_scheme: str = _f("unit", str, "unit, case_control or population")
    weight_tau: float | None = _f(None, _opt_float, "population case fraction (population weights)")
    smote: bool = _f(False, _bool, "apply geography-aware SMOTE to the training split")
    smote_k: int = _f(5, int, "SMOTE nearest neighbours")
    smote_ratio: float = _f(1.0, float, "target minority/majority ratio")
    smote_undersample: bool = _f(True, _bool, "undersample the majority class")
    # second stage
    level: float = _f(0.95, float, "credible interval level")
    n_clusters: int = _f(3, int, "number of risk tiers")
    kmeans_restarts: int = _f(50, int, "k-means restarts")
    max_lag: int = _f(40, int, "largest autocorrelation lag reported")
    # simulation
    sim_rows: int = _f(5, int, "simulated grid rows")
    sim_cols: int = _f(4, int, "simulated grid columns")
    sim_m: int = _f(100, int, "deliveries per simulated tract")
    sim_alpha0: float = _f(-3.0, float, "simulated random-effect mean")
    sim_tau_alpha: float = _f(0.5, float, "simulated random-effect scale")
    sim_rho: float = _f(0.8, float, "simulated spatial dependence")
    sim_beta: dict = _f({}, _coef_map, "simulated raw-scale coefficients, name=value,...")
    sim_rule: str = _f("rook", str, "simulated grid adjacency: rook or queen")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("outdir")
        d.pop("run_id")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def output_dir(self, command) -> Path:
        rid = self.run_id or f"{command}-{self.config_hash()[:12]}"
        return Path(self.outdir) / rid

    def mcmc(self) -> McmcConfig:
        try:
            return McmcConfig(self.n_iterations, self.burn_in, self.thin, self.n_chains, self.xi,
                              self.seed)
        except ValueError as e:
            name = next((f for f in ("burn_in", "n_iterations", "thin", "n_chains", "xi")
                         if f in str(e)), "n_iterations")
            raise ConfigError(name, str(e)) from None

    def validate(self, command) -> None:
        if self.model_kind not in ("CAR", "indRE"):
            raise ConfigError("model_kind", f"must be CAR or indRE, got {self.model_kind!r}")
        if self.contiguity not in ("rook", "queen"):
            raise ConfigError("contiguity", f"must be rook or queen, got {self.contiguity!r}")
        if self.weight_scheme not in ("unit", "case_control", "population"):
            raise ConfigError("weight_scheme", f"unknown scheme {self.weight_scheme!r}")
        if self.weight_scheme == "population" and self.weight_tau is None:
            raise ConfigError("weight_tau", "population weights need weight_tau")
        if not 0 < self.level < 1:
            raise ConfigError("level", "must lie in (0, 1)")
        self.mcmc()
        needs = {
            "fit": ("deliveries", "covariates"),
            "risk": ("deliveries", "covariates"),
            "rebalance": ("deliveries", "covariates"),
        }.get(command, ())
        for name in needs:
            if getattr(self, name) is None:
                raise ConfigError(name, "required")
        if command in ("fit", "risk", "rebalance") and not (self.adjacency or self.geojson):
            raise ConfigError("adjacency", "adjacency or geojson is required")
        if command == "rebalance" or (command == "fit" and self.smote):
            if not self.geojson:
                raise ConfigError("geojson", "SMOTE needs tract polygons to place synthetic cases")
        if command == "diagnose" and len(self.fit_dirs) != 1:
            raise ConfigError("fit_dirs", "diagnose takes one fit directory")
        if command == "risk" and len(self.fit_dirs) != 1:
            raise ConfigError("fit_dirs", "risk takes one fit directory")
        if command == "compare" and len(self.fit_dirs) != 2:
            raise ConfigError("fit_dirs", "compare takes two fit directories")
        for name in ("deliveries", "covariates", "adjacency", "geojson"):
            p = getattr(self, name)
            if p is not None and command != "simulate" and not os.path.exists(p):
                raise ConfigError(name, f"no such file: {p}")
        for p in self.fit_dirs:
            if not os.path.isdir(p):
                raise ConfigError("fit_dirs", f"no such directory: {p}")


CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep:
                raise ConfigError(key, f"{path}:{lineno}: expected key = value")
            if key not in CONFIG_FIELDS:
                raise ConfigError(key, f"{path}:{lineno}: unknown config key")
            out[key] = value.strip()
    return out


def build_config(file_values: dict, flag_values: dict) -> RunConfig:
    merged = {**file_values, **flag_values}
    kwargs = {}
    for key, raw in merged.items():
        parse = CONFIG_FIELDS[key].metadata["parse"]
        try:
            kwargs[key] = parse(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(key, f"bad value {raw!r}: {e}") from None
    return RunConfig(**kwargs)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tractrisk",
                                     description="Spatial risk modelling of rare birth outcomes")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value config file")
        for f in fields(RunConfig):
            default = f.default_factory() if f.default is MISSING else f.default
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, metavar="VALUE",
                           help=f"{f.metadata['help']} (default: {default})")
    return parser


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_manifest(cfg: RunConfig, command, out: Path, files) -> None:
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    _write_json(doc, out / "manifest.json")


def _load_graph(cfg: RunConfig):
    if cfg.adjacency:
        return read_edge_csv(cfg.adjacency)
    return graph_from_geojson(load_geojson(cfg.geojson), rule=cfg.contiguity,
                              id_property=cfg.id_property)


def _load_cohort(cfg: RunConfig):
    graph = _load_graph(cfg)
    cohort = dm.load_cohort(cfg.deliveries, cfg.covariates, graph)
    if cfg.min_count > 0:
        counts = cohort.counts_by_period()
        graph, removed = prune_cohort_graph(graph, counts, cfg.min_count)
        if removed:
            logger.info("pruned %d tracts", len(removed))
            cohort = dm.load_cohort(cfg.deliveries, cfg.covariates, graph)
    return cohort


def _geometry(cfg: RunConfig):
    return TractGeometry.from_geojson(load_geojson(cfg.geojson), id_property=cfg.id_property)


def _apply_rebalancing(cfg: RunConfig, train):
    if cfg.smote:
        scfg = rebalance.SmoteConfig(cfg.smote_k, cfg.smote_ratio, cfg.smote_undersample,
                                     cfg.seed)
        train = rebalance.smote_rebalance(train, _geometry(cfg), scfg,
                                          RandomStream(cfg.seed, _STREAM_SMOTE))
    scheme = rebalance.compute_weights(train, cfg.weight_scheme, cfg.weight_tau)
    spec = rebalance.rebalanced_spec(ModelSpec(model_kind=cfg.model_kind), scheme, train)
    return train, spec, scheme


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    graph, centroids = grid_graph(cfg.sim_rows, cfg.sim_cols, rule=cfg.sim_rule)
    truth = {"alpha0": cfg.sim_alpha0, "beta": cfg.sim_beta, "tau_alpha": cfg.sim_tau_alpha,
             "rho": cfg.sim_rho}
    cohort, truth = dm.simulate_cohort(graph, truth, cfg.sim_m,
                                       RandomStream(cfg.seed, _STREAM_SIMULATE),
                                       centroids=centroids)
    dm.write_deliveries_csv(cohort, out / "deliveries.csv")
    dm.write_covariates_csv(cohort, out / "covariates.csv")
    write_edge_csv(graph, out / "adjacency.csv")
    _write_json(grid_feature_collection(cfg.sim_rows, cfg.sim_cols), out / "tracts.geojson")
    doc = truth.to_dict()
    doc["tract_ids"] = list(graph.tract_ids)
    _write_json(doc, out / "truth.json")
    return ["deliveries.csv", "covariates.csv", "adjacency.csv", "tracts.geojson", "truth.json"]


def cmd_fit(cfg: RunConfig, out: Path) -> list:
    cohort = _load_cohort(cfg)
    if cfg.validation_years:
        train, valid = dm.split_train_validation(cohort, cfg.validation_years)
    else:
        train, valid = cohort, None
    train, spec, scheme = _apply_rebalancing(cfg, train)
    design = dm.assemble_design(train, standardize=cfg.standardize, columns=cfg.columns)
    samples = fit(spec, cfg.mcmc(), train, design, train.graph, n_jobs=cfg.n_jobs or None)
    samples.to_csv(out / "draws.csv")

    report = inference.diagnostics(samples, cfg.max_lag, cohort=train, design=design)
    inference.write_diagnostics_csv(report, out / "diagnostics.csv")
    extra = {
        "model_kind": cfg.model_kind,
        "n_draws": samples.n_draws,
        "standardization": design.standardization.to_dict(),
        "weights": asdict(scheme),
        "accept": {str(k): {n: float(v) for n, v in a.items()}
                   for k, a in samples.accept.items()},
        "dic": report.dic, "p_d": report.p_d, "waic": report.waic, "p_w": report.p_w,
        "n_train": train.N,
        "auc": None, "auc_se": None, "n_validation": None,
    }
    if valid is not None and valid.N:
        vdesign = dm.assemble_design(valid, standardization=design.standardization)
        theta = risk.patient_risk_matrix(samples, vdesign)
        scores = expit(theta).mean(axis=0)
        y = valid.outcome
        if 0 < y.sum() < y.size:
            a = inference.auc(scores, y)
            extra.update(auc=a, auc_se=inference.auc_standard_error(a, int(y.sum()),
                                                                     int(y.size - y.sum())))
        extra["n_validation"] = valid.N
    summaries = inference.summarize_coefficients(samples, design.standardization, cfg.level)
    inference.write_summary_json(summaries, out / "summary.json", extra)
    return ["draws.csv", "diagnostics.csv", "summary.json"]


def _read_fit(path):
    path = Path(path)
    with open(path / "summary.json") as fh:
        summary = json.load(fh)
    samples = PosteriorSamples.from_csv(path / "draws.csv", summary.get("model_kind", "CAR"))
    return samples, summary


def cmd_diagnose(cfg: RunConfig, out: Path) -> list:
    samples, _ = _read_fit(cfg.fit_dirs[0])
    report = inference.diagnostics(samples, cfg.max_lag)
    inference.write_diagnostics_csv(report, out / "ess.csv")
    with open(out / "acf.csv", "w") as fh:
        fh.write("param," + ",".join(f"lag{k}" for k in range(cfg.max_lag + 1)) + "\n")
        for name, row in zip(report.params, report.acf):
            fh.write(name + "," + ",".join(format(v, ".17g") for v in row) + "\n")
    names = ["alpha0", "tau_alpha", "tau_beta", "rho"]
    with open(out / "trace.csv", "w") as fh:
        fh.write("chain,iteration," + ",".join(names)
                 + "".join(f",beta[{b}]" for b in samples.beta_names) + "\n")
        for s in range(samples.n_draws):
            vals = [samples[n][s] for n in names] + list(samples["beta"][s])
            fh.write(f"{samples.chain[s]},{samples.iteration[s]},"
                     + ",".join(format(v, ".17g") for v in vals) + "\n")
    return ["ess.csv", "acf.csv", "trace.csv"]


def cmd_risk(cfg: RunConfig, out: Path) -> list:
    samples, summary = _read_fit(cfg.fit_dirs[0])
    cohort = _load_cohort(cfg)
    if cfg.validation_years:
        _, cohort = dm.split_train_validation(cohort, cfg.validation_years)
    std = dm.Standardization.from_dict(summary["standardization"])
    design = dm.assemble_design(cohort, standardization=std)
    theta = risk.patient_risk_matrix(samples, design, tract_ids=cohort.graph.tract_ids)
    hoods, _ = risk.neighborhood_risks(theta, cohort, cfg.level)
    tiers = risk.kmeans_stratify([r.p_mean for r in hoods], RandomStream(cfg.seed, _STREAM_KMEANS),
                                 k=cfg.n_clusters, n_restarts=cfg.kmeans_restarts,
                                 tract_ids=[r.tract_id for r in hoods])
    clusters = risk.cluster_risk_posteriors(hoods, tiers, cfg.level)
    contrasts = risk.cluster_covariate_analysis(cohort.tract_covariate_means(), tiers, clusters)
    risk.write_neighborhood_csv(hoods, tiers, out / "neighborhoods.csv")
    risk.write_cluster_json(clusters, tiers, out / "clusters.json",
                            extra={"covariate_contrasts": contrasts})
    alpha_means = risk.export_random_effect_map(samples, path=out / "random_effects.csv")
    files = ["neighborhoods.csv", "clusters.json", "random_effects.csv"]
    if cfg.geojson:
        fc = risk.annotate_geojson(load_geojson(cfg.geojson), hoods, tiers, alpha_means,
                                   cfg.id_property)
        _write_json(fc, out / "tracts_risk.geojson")
        files.append("tracts_risk.geojson")
    return files


def cmd_compare(cfg: RunConfig, out: Path) -> list:
    rows = []
    for d in cfg.fit_dirs:
        _, summary = _read_fit(d)
        rows.append([d, summary.get("model_kind"), summary.get("dic"), summary.get("p_d"),
                     summary.get("waic"), summary.get("p_w"), summary.get("auc"),
                     summary.get("auc_se")])
    with open(out / "comparison.csv", "w") as fh:
        fh.write("fit,model_kind,dic,p_d,waic,p_w,auc,auc_se\n")
        for r in rows:
            fh.write(",".join("" if v is None else (format(v, ".17g") if isinstance(v, float)
                                                    else str(v)) for v in r) + "\n")
    return ["comparison.csv"]


def cmd_rebalance(cfg: RunConfig, out: Path) -> list:
    cohort = _load_cohort(cfg)
    if cfg.validation_years:
        cohort, _ = dm.split_train_validation(cohort, cfg.validation_years)
    scfg = rebalance.SmoteConfig(cfg.smote_k, cfg.smote_ratio, cfg.smote_undersample, cfg.seed)
    balanced = rebalance.smote_rebalance(cohort, _geometry(cfg), scfg,
                                         RandomStream(cfg.seed, _STREAM_SMOTE))
    dm.write_deliveries_csv(balanced, out / "deliveries.csv")
    dm.write_covariates_csv(balanced, out / "covariates.csv")
    scheme = rebalance.compute_weights(cohort, cfg.weight_scheme, cfg.weight_tau)
    d = balanced.deliveries
    _write_json({"weights": asdict(scheme), "n_records": int(len(d)),
                 "n_cases": int(d["outcome"].sum()), "n_synthetic": int(d["synthetic"].sum())},
                out / "rebalance.json")
    return ["deliveries.csv", "covariates.csv", "rebalance.json"]


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "risk": cmd_risk,
    "compare": cmd_compare,
    "rebalance": cmd_rebalance,
}


def run(command, cfg: RunConfig) -> Path:
    """Validate ``cfg``, run ``command`` and write the manifest; returns the
    output directory."""
    cfg.validate(command)
    out = cfg.output_dir(command)
    out.mkdir(parents=True, exist_ok=True)
    files = HANDLERS[command](cfg, out)
    _write_manifest(cfg, command, out, files)
    return out


def _error_doc(command, exc) -> dict:
    doc = {"command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        doc["field"] = exc.field
    return doc


def main(argv=None) -> int:
    parser = make_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.pop("config", None)
    cfg = None
    try:
        file_values = read_config_file(config_path) if config_path else {}
        cfg = build_config(file_values, args)
        out = run(command, cfg)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error document
        doc = _error_doc(command, exc)
        json.dump(doc, sys.stderr, sort_keys=True)
        sys.stderr.write("\n")
        if cfg is not None:
            try:
                err_dir = cfg.output_dir(command)
                err_dir.mkdir(parents=True, exist_ok=True)
                _write_json(doc, err_dir / "error.json")
            except OSError:
                pass
        if verbose:
            raise
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
