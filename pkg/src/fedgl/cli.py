"""Command line entry point: train, attack-eval, certify, finetune, report."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import dump_config, load_config, validate_or_raise
from .errors import ConfigError, FedGLError
from .graph import Dataset, save_graphs
from .runio import make_run_dir, parse_value, read_csv, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("fedgl")

ROUND_COLUMNS = ["round", "selected", "ma", "ba", "checksum"]
METRIC_COLUMNS = ["dataset", "attack", "scheme", "seed", "rho", "n_tri", "ma", "ba_all", "ba_nontarget",
                  "avg_n_tri", "avg_e_tri", "n_test", "n_backdoor", "skipped", "config_hash"]
SUMMARY_COLUMNS = ["T", "max_m_star", "certified_ba", "backdoored_ma", "ensemble_ma", "n_clean", "n_backdoor"]


def _config(args, base_dir=None):
    path = args.config
    if path is None and base_dir is not None:
        path = Path(base_dir) / "config.yaml"
    cfg = load_config(path, args.set or ())
    return validate_or_raise(cfg)


def _start_run(cfg, verb):
    out = make_run_dir(cfg.output_dir, verb, cfg.config_hash())
    (out / "config.yaml").write_text(dump_config(cfg))
    (out / "config.sha256").write_text(cfg.config_hash() + "\n")
    log.info("run directory %s", out)
    return out


def _metric_row(cfg, exp, m):
    atk = cfg.attack
    row = {
        "dataset": exp.dataset.name, "attack": atk.kind, "scheme": atk.scheme, "seed": cfg.seed,
        "rho": atk.rho, "n_tri": atk.n_tri, "config_hash": cfg.config_hash(),
    }
    row.update(m.row())
    return row


def _load_checkpoint(ckpt, exp):
    ckpt = Path(ckpt)
    if not (ckpt / "model.npz").exists():
        raise FileNotFoundError(f"no model checkpoint in {ckpt}")
    model = pipeline.load_model(ckpt / "model.npz", exp)
    gens = {}
    for p in sorted((ckpt / "generators").glob("client_*.npz")) if (ckpt / "generators").exists() else []:
        idx = int(p.stem.split("_")[1])
        gens[idx] = pipeline.load_generator(p, exp, idx)
    pipeline.attach_generators(exp, gens)
    return model, gens


def _write_metrics(out, cfg, exp, model, gens):
    testset = pipeline.backdoor_testset(exp, gens)
    m = pipeline.attack_metrics(exp, model, gens, testset)
    write_csv(out / "metrics.csv", "metrics", [_metric_row(cfg, exp, m)], METRIC_COLUMNS)
    if testset is not None and testset.pairs:
        bd = Dataset.from_graphs([b for _, b in testset.pairs], num_classes=exp.num_classes,
                                 name=f"{exp.dataset.name}-backdoored")
        save_graphs(out / "backdoor_test.graphs", bd)
    return m


def cmd_train(args):
    cfg = _config(args)
    exp = pipeline.prepare(cfg)
    validate_or_raise(cfg, exp.num_classes)
    out = _start_run(cfg, "train")
    model, logs, gens = pipeline.train(exp, cfg.eval_every)
    pipeline.save_model(out / "model.npz", model)
    if gens:
        (out / "generators").mkdir()
        for idx, g in sorted(gens.items()):
            pipeline.save_generator(out / "generators" / f"client_{idx:03d}.npz", g)
    rows = [{"round": r.round, "selected": r.selected, "ma": r.ma, "ba": r.ba, "checksum": r.checksum}
            for r in logs]
    write_csv(out / "rounds.csv", "rounds", rows, ROUND_COLUMNS)
    m = _write_metrics(out, cfg, exp, model, gens)
    print(f"{out}  MA={m.ma:.4f}" + ("" if m.ba_all is None else f"  BA={m.ba_all:.4f}"))
    return EXIT_OK


def cmd_attack_eval(args):
    cfg = _config(args, args.checkpoint)
    exp = pipeline.prepare(cfg)
    model, gens = _load_checkpoint(args.checkpoint, exp)
    out = _start_run(cfg, "attack-eval")
    m = _write_metrics(out, cfg, exp, model, gens)
    print(f"{out}  MA={m.ma:.4f}" + ("" if m.ba_all is None else f"  BA={m.ba_all:.4f}"))
    return EXIT_OK


def cmd_certify(args):
    cfg = _config(args, args.checkpoint)
    exp = pipeline.prepare(cfg)
    model, gens = _load_checkpoint(args.checkpoint, exp)
    grid = [int(t) for t in args.T] if args.T else list(cfg.defense.T_grid)
    reports = pipeline.certify(exp, model, gens, grid, cfg.defense.successful_only)
    out = _start_run(cfg, "certify")
    curve_rows, summary = [], []
    for rep in reports:
        curve_rows += [{"T": rep.T, "m": m, "certified_ma": v} for m, v in zip(rep.m_grid, rep.certified_ma)]
        summary.append({c: getattr(rep, c) for c in SUMMARY_COLUMNS})
    write_csv(out / "certified_curve.csv", "certified-curve", curve_rows, ["T", "m", "certified_ma"])
    write_csv(out / "certified_summary.csv", "certified-summary", summary, SUMMARY_COLUMNS)
    for rep in reports:
        print(f"T={rep.T}  max m*={rep.max_m_star}  certified BA={rep.certified_ba}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = _config(args, args.checkpoint)
    exp = pipeline.prepare(cfg)
    model, gens = _load_checkpoint(args.checkpoint, exp)
    rounds = cfg.defense.finetune_rounds if args.rounds is None else args.rounds
    before = pipeline.attack_metrics(exp, model, gens)
    tuned = pipeline.finetune(exp, model, rounds, cfg.defense.aug_T_set)
    after = pipeline.attack_metrics(exp, tuned, gens)
    out = _start_run(cfg, "finetune")
    pipeline.save_model(out / "model.npz", tuned)
    if gens:
        (out / "generators").mkdir()
        for idx, g in sorted(gens.items()):
            pipeline.save_generator(out / "generators" / f"client_{idx:03d}.npz", g)
    rows = [dict(stage="before", rounds=0, **before.row()), dict(stage="after", rounds=rounds, **after.row())]
    write_csv(out / "finetune.csv", "finetune", rows, ["stage", "rounds", "ma", "ba_all", "ba_nontarget"])
    write_csv(out / "metrics.csv", "metrics", [_metric_row(cfg, exp, after)], METRIC_COLUMNS)
    print(f"{out}  MA {before.ma:.4f} -> {after.ma:.4f}")
    return EXIT_OK


def build_report(run_dirs):
    """Merge metrics of several runs into table rows; raises listing every missing run."""
    missing = [str(d) for d in run_dirs if not (Path(d) / "metrics.csv").exists()]
    if missing:
        raise FileNotFoundError("missing run(s): " + ", ".join(missing))
    rows = []
    for d in run_dirs:
        _, _, recs = read_csv(Path(d) / "metrics.csv")
        rows += [dict(r, run=Path(d).name) for r in recs]
    clean = [parse_value(r["ma"]) for r in rows if r["attack"] == "none"]
    attacked = [r for r in rows if r["attack"] != "none"] or rows
    return attacked, (clean[0] if clean else None)


def render_markdown(rows, clean_ma):
    header = "MA without attack: " + ("n/a" if clean_ma is None else f"{clean_ma:.4f}")
    cols = ["dataset", "attack", "scheme", "seed", "ma", "ba_all", "ba_nontarget", "avg_n_tri", "avg_e_tri"]
    lines = [header, "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        lines.append("| " + " | ".join(r.get(c, "") for c in cols) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args):
    rows, clean_ma = build_report(args.runs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", "report", rows, ["run"] + METRIC_COLUMNS)
    md = render_markdown(rows, clean_ma)
    (out / "report.md").write_text(md)
    print(md, end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fedgl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, checkpoint):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key by dotted path, e.g. fed.rounds=50")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="run directory produced by `fedgl train`")

    common(sub.add_parser("train", help="federated training with the configured attack"), False)
    common(sub.add_parser("attack-eval", help="MA/BA of a trained checkpoint"), True)
    c = sub.add_parser("certify", help="certified MA/BA curves over a T grid")
    common(c, True)
    c.add_argument("--T", type=int, nargs="+", help="override the T grid")
    f = sub.add_parser("finetune", help="continue training on clean (optionally augmented) data")
    common(f, True)
    f.add_argument("--rounds", type=int)
    r = sub.add_parser("report", help="merge run directories into one table")
    r.add_argument("runs", nargs="+")
    r.add_argument("--out", default="report")
    return p


COMMANDS = {
    "train": cmd_train, "attack-eval": cmd_attack_eval, "certify": cmd_certify,
    "finetune": cmd_finetune, "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedGLError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
