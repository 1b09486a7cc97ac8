"""Command-line entry point.

Subcommands cover the full desk workflow: generate the toy task, train a
detector, evaluate it, certify it, and ablate the cluster count. Every
command writes its artifacts into --out and finishes with a manifest.cfg
recording the resolved configuration and a sha256 per artifact, so a
directory is self-describing and reruns are byte-comparable.

Exit codes: 0 success, 2 configuration error, 3 numeric failure during
training or scoring, 4 I/O or file-format error.
"""

import argparse
import os
import sys

import numpy as np

from .autodiff import GraphError
from .certify import certify_dataset, radius_profile, verify_radius
from .config import ConfigError, load_config, resolve_config, write_manifest
from .data import LabeledSet, circle_means, gen_gaussian_mixture, gen_ring, load_csv, save_csv, split
from .losses import LossConfig
from .metrics import evaluate_scores, threshold_at_tpr
from .model import init_mlp, load_model, save_model
from .scores import model_scores
from .trainer import TrainConfig, TrajectoryLog, train
from . import plots

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _data_dir(cfg, out):
    return cfg["io"]["data_dir"] or out


def _loss_config(cfg) -> LossConfig:
    c = cfg["loss"]
    return LossConfig(lambda_s=c["lambda_s"], lambda_grad=c["lambda_grad"],
                      m_in=c["m_in"], m_aux=c["m_aux"])


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(mode=t["mode"], epochs=t["epochs"], batch_size=t["batch_size"],
                       lr_max=t["lr_max"], lr_min=t["lr_min"], momentum=t["momentum"],
                       weight_decay=t["weight_decay"], seed=t["seed"],
                       cluster_k=t["cluster_k"], pool_multiple=t["pool_multiple"],
                       sampler_restarts=t["sampler_restarts"],
                       loss=_loss_config(cfg)).validate()


def _build_model(cfg, input_dim, classes):
    m = cfg["model"]
    return init_mlp(input_dim, m["hidden"], classes, seed=m["init_seed"],
                    activation=m["activation"], leaky_slope=m["leaky_slope"])


def _finish(out, cfg, artifacts):
    path = write_manifest(out, cfg, artifacts)
    for name in artifacts + ["manifest.cfg"]:
        print(f"wrote {os.path.join(out, name)}")
    return path


def cmd_gen_data(cfg, out):
    d = cfg["data"]
    means = circle_means(d["classes"], d["mean_radius"])
    pool = gen_gaussian_mixture(d["pool_per_class"], means, d["sigma"], seed=d["seed"])
    frac = d["train_fraction"]
    id_train, id_test = split(pool, (frac, 1.0 - frac), seed=d["seed"] + 1)
    aux = gen_ring(d["aux_n"], d["aux_r_min"], d["aux_r_max"], seed=d["seed"] + 2)
    ood = gen_ring(d["ood_n"], d["ood_r_min"], d["ood_r_max"], seed=d["seed"] + 3)
    parts = {"id_train.csv": id_train, "id_test.csv": id_test,
             "aux.csv": aux, "ood_test.csv": ood}
    for name, ds in parts.items():
        save_csv(os.path.join(out, name), ds)
    plots.plot_dataset(id_train, aux.x, ood.x, os.path.join(out, "preview.svg"))
    _finish(out, cfg, sorted(parts) + ["preview.svg"])


def cmd_train(cfg, out):
    tc = _train_config(cfg)  # reject bad settings before touching any files
    data_dir = _data_dir(cfg, out)
    id_train = load_csv(os.path.join(data_dir, "id_train.csv"))
    if id_train.y is None:
        raise GraphError("id_train.csv carries no labels")
    aux_x = None
    if tc.mode != "ce":
        aux_x = load_csv(os.path.join(data_dir, "aux.csv")).x
    model = _build_model(cfg, id_train.x.shape[1], int(id_train.y.max()) + 1)
    log = train(model, id_train, aux_x, tc)
    ckpt = cfg["io"]["checkpoint"]
    save_model(os.path.join(out, ckpt), model)
    log.to_csv(os.path.join(out, "trajectory.csv"))
    plots.plot_trajectory(log, os.path.join(out, "trajectory.svg"))
    _finish(out, cfg, [ckpt, "trajectory.csv", "trajectory.svg"])


def _load_eval_inputs(cfg, out):
    data_dir = _data_dir(cfg, out)
    m = cfg["model"]
    model = load_model(os.path.join(data_dir, cfg["io"]["checkpoint"]),
                       activation=m["activation"], leaky_slope=m["leaky_slope"])
    id_test = load_csv(os.path.join(data_dir, "id_test.csv"))
    ood = load_csv(os.path.join(data_dir, "ood_test.csv"))
    return model, id_test, ood


def cmd_eval(cfg, out):
    model, id_test, ood = _load_eval_inputs(cfg, out)
    kind = cfg["eval"]["score"]
    s_id = model_scores(model, id_test.x, kind)
    s_ood = model_scores(model, ood.x, kind)
    rep = evaluate_scores(s_id, s_ood, kind=kind, tpr=cfg["eval"]["tpr"],
                          n_bins=cfg["eval"]["n_bins"])
    artifacts = rep.write(out)
    plots.plot_histograms(rep, os.path.join(out, "hist.svg"))
    artifacts.append("hist.svg")
    if model.input_dim == 2:
        plots.plot_boundary(model, id_test, ood.x, rep.gamma,
                            os.path.join(out, "boundary.svg"), kind=kind)
        artifacts.append("boundary.svg")
    print(f"gamma={rep.gamma!r} fpr95={rep.fpr!r} auroc={rep.auroc!r} overlap={rep.overlap!r}")
    _finish(out, cfg, artifacts)


def cmd_certify(cfg, out):
    model, id_test, ood = _load_eval_inputs(cfg, out)
    kind = cfg["eval"]["score"]
    c = cfg["certify"]
    gamma = threshold_at_tpr(model_scores(model, id_test.x, kind), cfg["eval"]["tpr"])
    cap = c["max_per_side"]
    sides = {"id": id_test.x if cap <= 0 else id_test.x[:cap],
             "ood": ood.x if cap <= 0 else ood.x[:cap]}
    rows = []
    sets = {}
    total_viol = 0
    for side, x in sides.items():
        cs = certify_dataset(model, x, gamma, side, kind=kind, eps_cap=c["eps_cap"],
                             n_samples=c["ball_samples"], seed=c["seed"],
                             inflate=c["inflate"])
        sets[side] = cs
        for i in range(x.shape[0]):
            viol = 0
            if cs.certified[i]:
                viol = verify_radius(model, x[i], gamma, float(cs.eps_star[i]), side,
                                     kind=kind, n_probes=c["probes"],
                                     seed=c["seed"] * 2_000_003 + i)
                total_viol += viol
            rows.append((side, i, float(cs.scores[i]), float(cs.lipschitz[i]),
                         float(cs.eps_star[i]), bool(cs.certified[i]), viol))
    with open(os.path.join(out, "certificates.csv"), "w", newline="") as fh:
        fh.write("side,index,score,lipschitz,eps_star,certified,violations\n")
        for side, i, s, l, e, flag, viol in rows:
            fh.write(f"{side},{i},{s!r},{l!r},{e!r},{int(flag)},{viol}\n")
    grid = np.linspace(0.0, c["eps_cap"], c["grid_points"])
    profiles = {side: radius_profile(cs.eps_star, cs.certified, grid)
                for side, cs in sets.items()}
    with open(os.path.join(out, "cert_summary.csv"), "w", newline="") as fh:
        fh.write("radius,frac_id,frac_ood\n")
        for j, r in enumerate(grid):
            fh.write(f"{float(r)!r},{float(profiles['id'][j])!r},{float(profiles['ood'][j])!r}\n")
    with open(os.path.join(out, "certify_meta.csv"), "w", newline="") as fh:
        fh.write("kind,gamma,eps_cap,total_violations\n")
        fh.write(f"{kind},{gamma!r},{float(c['eps_cap'])!r},{total_viol}\n")
    plots.plot_radius_profile(grid, profiles, os.path.join(out, "radius_profile.svg"))
    print(f"gamma={gamma!r} certified_id={float(profiles['id'][0])!r} "
          f"certified_ood={float(profiles['ood'][0])!r} violations={total_viol}")
    _finish(out, cfg, ["certificates.csv", "cert_summary.csv", "certify_meta.csv",
                       "radius_profile.svg"])


def cmd_ablate_clusters(cfg, out):
    data_dir = _data_dir(cfg, out)
    id_train = load_csv(os.path.join(data_dir, "id_train.csv"))
    id_test = load_csv(os.path.join(data_dir, "id_test.csv"))
    ood = load_csv(os.path.join(data_dir, "ood_test.csv"))
    aux_x = load_csv(os.path.join(data_dir, "aux.csv")).x
    kind = cfg["eval"]["score"]
    legs = [("uniform", 0, "greg")] + [("cluster", k, "greg_plus") for k in cfg["ablate"]["k_list"]]
    rows = []
    for sampler, k, mode in legs:
        tc = _train_config(cfg)
        tc.mode = mode
        tc.cluster_k = k
        tc.validate()
        model = _build_model(cfg, id_train.x.shape[1], int(id_train.y.max()) + 1)
        train(model, id_train, aux_x, tc)
        rep = evaluate_scores(model_scores(model, id_test.x, kind),
                              model_scores(model, ood.x, kind),
                              kind=kind, tpr=cfg["eval"]["tpr"], n_bins=cfg["eval"]["n_bins"])
        rows.append({"sampler": sampler, "k": k, "gamma": rep.gamma, "fpr95": rep.fpr,
                     "auroc": rep.auroc, "overlap": rep.overlap})
        print(f"{sampler} k={k if sampler == 'cluster' else '-'} "
              f"fpr95={rep.fpr!r} auroc={rep.auroc!r}")
    with open(os.path.join(out, "ablation.csv"), "w", newline="") as fh:
        fh.write("sampler,k,gamma,fpr95,auroc,overlap\n")
        for r in rows:
            kcol = str(r["k"]) if r["sampler"] == "cluster" else ""
            fh.write(f"{r['sampler']},{kcol},{r['gamma']!r},{r['fpr95']!r},"
                     f"{r['auroc']!r},{r['overlap']!r}\n")
    plots.plot_ablation(rows, os.path.join(out, "ablation.svg"))
    _finish(out, cfg, ["ablation.csv", "ablation.svg"])


COMMANDS = {
    "gen-data": (cmd_gen_data, ("data", "seed")),
    "train": (cmd_train, ("train", "seed")),
    "eval": (cmd_eval, None),
    "certify": (cmd_certify, ("certify", "seed")),
    "ablate-clusters": (cmd_ablate_clusters, ("train", "seed")),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greg-ood",
        description="Gradient-regularized energy-based OOD detection on toy tasks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, seed_target) in COMMANDS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        if seed_target is not None:
            sp.add_argument("--seed", type=int, default=None,
                            help=f"override {seed_target[0]}.{seed_target[1]}")
        sp.set_defaults(fn=fn, seed_target=seed_target)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.seed_target is not None and args.seed is not None:
            overrides[args.seed_target] = args.seed
        cfg = load_config(args.config, overrides) if args.config else resolve_config(None, overrides)
        os.makedirs(args.out, exist_ok=True)
        args.fn(cfg, args.out)
        return EXIT_OK
    except (ConfigError, GraphError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
