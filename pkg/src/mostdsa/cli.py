"""Command-line entry point: ``mostdsa {gen-data,train,interpolate,eval,bench}``.

Exit status is 0 on success, 1 for usage errors (bad arguments or config) and
2 for runtime failures (missing files, corrupt checkpoints, diverged training).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .config import Config, parse_pairs, toy_config, validate_schedule
from .errors import ConfigError, UsageError
from .metrics_eval import (
    bench_table,
    benchmark,
    evaluate,
    format_table,
    frame_average,
)
from .synth_dsa import REGIMES, generate_dataset, list_sequences, make_scene, read_sequence, render
from .tensor_ops import ParamStore, no_grad
from .train import TrainingError, load_groups, train
from .warp_refine import init_model, interpolate

log = logging.getLogger("mostdsa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_res(text: str) -> Tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"resolution {text!r} must look like 64x64") from None
    if h < 8 or w < 8 or h % 4 or w % 4:
        raise UsageError(f"resolution {h}x{w} must be multiples of 4 and at least 8")
    return h, w


def parse_floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def parse_ints(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"cannot parse integer list {text!r}") from None


def read_image(path) -> np.ndarray:
    from PIL import Image

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image {path} does not exist")
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float32) / 255.0


def write_image(path, img: np.ndarray) -> None:
    from PIL import Image

    q = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)


def resize_scope(params: ParamStore, r: int) -> ParamStore:
    """Copy of ``params`` whose relative embedding covers scope ``r``.

    Smaller scopes keep the central taps; larger ones pad with zeros.
    """
    emb = params["attn.emb"].data
    old = int(round(np.sqrt(emb.shape[0])))
    if old == r:
        return params
    k = emb.shape[1]
    grid = emb.reshape(old, old, k)
    new = np.zeros((r, r, k), dtype=emb.dtype)
    keep = min(old, r)
    so, sn = (old - keep) // 2, (r - keep) // 2
    new[sn:sn + keep, sn:sn + keep] = grid[so:so + keep, so:so + keep]
    out = ParamStore(seed=None, dtype=params.dtype)
    for name, t in params.items():
        out.add(name, new.reshape(r * r, k) if name == "attn.emb" else t.data, frozen=name in params.frozen)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    res = parse_res(args.res)
    if args.frames < 3:
        raise UsageError(f"--frames must be >= 3, got {args.frames}")
    if args.scenes < 1:
        raise UsageError(f"--scenes must be >= 1, got {args.scenes}")
    dirs = generate_dataset(args.out, args.scenes, args.frames, res, args.regime, args.seed)
    print(f"wrote {len(dirs)} sequences of {args.frames} frames at {res[0]}x{res[1]} to {args.out}")
    return 0


def load_config(args) -> Config:
    overrides = {}
    if args.n_interp is not None:
        overrides["n_interp"] = args.n_interp
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    pairs = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file {path} does not exist")
        pairs = parse_pairs(path.read_text())
    if args.preset == "toy":
        # the toy still-group share depends on n_interp, so resolve it first
        n = overrides.get("n_interp", pairs.get("n_interp", 1))
        base = toy_config(n_interp=Config.from_mapping({"n_interp": n}).n_interp)
    else:
        base = Config()
    if pairs:
        return Config.from_mapping({**vars(base), **pairs, **overrides})
    return base.replace(**overrides) if overrides else base


def cmd_train(args) -> int:
    cfg = load_config(args)
    cfg = cfg.replace(data=str(args.data), out=str(args.out_ckpt))
    groups = load_groups(args.data, cfg.n_interp, cfg.static_frac, cfg.seed)
    print(f"training n_interp={cfg.n_interp} r={cfg.scope} on {len(groups.groups)} groups for {cfg.epochs} epochs")

    def report(epoch, losses):
        print(f"epoch {epoch:3d}  median loss {np.median(losses):.6f}  mean loss {np.mean(losses):.6f}", flush=True)

    params, history = train(cfg, groups, on_epoch=report)
    checkpoint.save(args.out_ckpt, params, cfg)
    Path(str(args.out_ckpt) + ".log").write_text(history.to_text())
    print(f"wrote checkpoint {args.out_ckpt}")
    return 0


def _load_model(path) -> Tuple[ParamStore, Config]:
    return checkpoint.load(path)


def cmd_interpolate(args) -> int:
    params, cfg = _load_model(args.ckpt)
    try:
        times = validate_schedule(parse_floats(args.times))
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    I0, I1 = read_image(args.frame0), read_image(args.frame1)
    if I0.shape != I1.shape:
        raise UsageError(f"frames differ in size: {I0.shape} vs {I1.shape}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with no_grad():
        results = interpolate(I0, I1, times, params, r=cfg.scope, heads=cfg.heads, details=True)
    for t, s in zip(times, results):
        write_image(out / f"interp_t{t:.4f}.png", s.frame.data[0, 0])
        if args.dump_residual:
            write_image(out / f"blend_t{t:.4f}.png", np.clip(s.blend.data[0, 0], 0, 1))
            # Residuals are signed; map [-0.5, 0.5] onto [0, 1] for viewing.
            write_image(out / f"residual_t{t:.4f}.png", np.clip(s.residual.data[0, 0] + 0.5, 0, 1))
    print(f"wrote {len(times)} frame(s) to {out}")
    return 0


def model_predictor(params: ParamStore, r: int, heads: int):
    def predict(I0, I1, times):
        with no_grad():
            frames = interpolate(I0, I1, times, params, r=r, heads=heads)
        return [f.data[0, 0] for f in frames]

    return predict


def load_test_set(data) -> List[Tuple[str, np.ndarray]]:
    return [(d.name, read_sequence(d)) for d in list_sequences(data)]


def cmd_eval(args) -> int:
    params, cfg = _load_model(args.ckpt)
    n = args.n_interp or cfg.n_interp
    if n != cfg.n_interp:
        warnings.warn(f"checkpoint was trained for n_interp={cfg.n_interp}, evaluating n_interp={n}")
    seqs = load_test_set(args.data)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    if args.r_sweep:
        return _r_sweep(args, params, cfg, n, seqs, report)
    r = args.r or cfg.scope
    if r != cfg.scope:
        warnings.warn(f"checkpoint was trained with r={cfg.scope} but evaluation uses r={r}; embedding is cropped or zero-padded")
        params = resize_scope(params, r)
    model = evaluate(model_predictor(params, r, cfg.heads), seqs, n, label=f"model n_interp={n} r={r}")
    text = model.to_table()
    jsonl = model.to_jsonl()
    if args.baseline:
        base = evaluate(frame_average, seqs, n, label=f"frame-average baseline n_interp={n}")
        text += "\n" + base.to_table()
        (report.parent / (report.name + ".baseline.jsonl")).write_text(base.to_jsonl())
    Path(str(report) + ".txt").write_text(text)
    Path(str(report) + ".jsonl").write_text(jsonl)
    print(text, end="")
    return 0


def _r_sweep(args, params, cfg, n, seqs, report: Path) -> int:
    rows = [("r", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std")]
    means = []
    records = []
    for r in parse_ints(args.r_sweep):
        try:
            from .config import validate_scope

            validate_scope(r)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        p = resize_scope(params, r)
        rep = evaluate(model_predictor(p, r, cfg.heads), seqs, n)
        (sm, ss), (pm, ps) = rep.ssim, rep.psnr
        means.append(sm)
        rows.append((str(r), f"{sm:.6f}", f"{ss:.6f}", f"{pm:.4f}", f"{ps:.4f}"))
        records.append(f'{{"r": {r}, "ssim_mean": {sm!r}, "ssim_std": {ss!r}, "psnr_mean": {pm!r}, "psnr_std": {ps!r}}}\n')
    text = format_table(rows, title=f"r sweep, n_interp={n} (trained r={cfg.scope})")
    text += f"ssim spread across r: {max(means) - min(means):.6f}\n"
    Path(str(report) + ".txt").write_text(text)
    Path(str(report) + ".jsonl").write_text("".join(records))
    print(text, end="")
    return 0


def cmd_bench(args) -> int:
    res = parse_res(args.res)
    if args.ckpt:
        params, cfg = _load_model(args.ckpt)
    else:
        cfg = Config(seed=args.seed)
        params = init_model(cfg)
    ns = parse_ints(args.n_interp)
    from .config import DEFAULT_SCHEDULES

    scheds = []
    for n in ns:
        if n not in DEFAULT_SCHEDULES:
            raise UsageError(f"--n-interp values must be in {sorted(DEFAULT_SCHEDULES)}, got {n}")
        scheds.append(DEFAULT_SCHEDULES[n])
    scene = make_scene(args.seed, 3, res, "mixed")
    pair = (render(scene, 0.0), render(scene, 2.0))
    r = cfg.scope

    def run(I0, I1, sched):
        return interpolate(I0, I1, sched, params, r=r, heads=cfg.heads)

    rows = benchmark(run, [pair], scheds, repeats=args.repeats)
    print(bench_table(rows, res), end="")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mostdsa", description="Multi-frame DSA interpolation with scoped lambda attention.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write synthetic angiography sequences")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--scenes", type=int, default=200)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--res", default="64x64", help="HxW, multiples of 4")
    g.add_argument("--regime", default="all", choices=REGIMES + ("all",), help='"all" cycles the four regimes')
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="key = value config file (overrides the preset)")
    t.add_argument("--preset", choices=("toy", "full"), default="toy")
    t.add_argument("--out-ckpt", required=True)
    t.add_argument("--n-interp", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("interpolate", help="synthesise intermediate frames between two images")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--frame0", required=True)
    i.add_argument("--frame1", required=True)
    i.add_argument("--times", default="0.5", help="comma-separated times in (0, 1)")
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--dump-residual", action="store_true", help="also write blend and residual images")
    i.set_defaults(func=cmd_interpolate)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--n-interp", type=int)
    e.add_argument("--report", required=True, help="output prefix; writes PREFIX.txt and PREFIX.jsonl")
    e.add_argument("--r", type=int, help="context scope override (warns if it differs from training)")
    e.add_argument("--r-sweep", help="comma-separated scopes, e.g. 3,9,21,29")
    e.add_argument("--baseline", action="store_true", help="also score the frame-average baseline")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time and memory per schedule length")
    b.add_argument("--ckpt", help="checkpoint; default is a freshly initialised full-size model")
    b.add_argument("--res", default="320x320")
    b.add_argument("--n-interp", default="1,2,3")
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return 1
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, checkpoint.CheckpointError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
