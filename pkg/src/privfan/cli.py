"""``privfan`` command line.

Every subcommand writes into an output directory together with a
``manifest.json`` (parameters plus sha256 of inputs and outputs). Options can
also come from ``--config FILE`` holding ``key = value`` lines whose keys are
option names (``base-qp`` or ``base_qp``); command-line flags win.

Exit codes: 0 success, 1 usage, 2 data or format error, 3 missing external codec.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from privfan.codec import CodecId, LayeredBitstream
from privfan.errors import CodecUnavailableError, PrivfanError

log = logging.getLogger("privfan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ENV = 0, 1, 2, 3
DEFAULT_BASE_SIZE = 179


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _codec(text: str) -> CodecId:
    names = {"internal": CodecId.INTERNAL_DCT, "external": CodecId.EXTERNAL}
    if text not in names:
        raise argparse.ArgumentTypeError(f"codec must be one of {sorted(names)}")
    return names[text]


def read_config_file(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# --- subcommands ------------------------------------------------------------


def _manifest(out, command, args, inputs=(), outputs=()):
    from privfan.pipeline import write_manifest

    params = {k: v for k, v in vars(args).items() if k not in ("func", "config", "verbose")}
    return write_manifest(out, command, params, inputs, outputs)


def _base_size(args, corpus=None) -> int:
    if args.base_size is not None:
        return args.base_size
    if corpus is not None and "base_size" in corpus.meta:
        return int(corpus.meta["base_size"])
    return DEFAULT_BASE_SIZE


def cmd_synth(args):
    from privfan.corpus import corpus_files, synth_corpus, write_corpus

    corpus = synth_corpus(args.scenes, seed=args.seed, size=(args.height, args.width), regions=args.regions,
                          plates=args.plates, ink=args.ink)
    root = write_corpus(corpus, args.out)
    _manifest(root, "synth", args, outputs=[p for p in corpus_files(root) if p.name != "manifest.json"])
    print(f"wrote {len(corpus)} scenes to {root}")


def cmd_score(args):
    from privfan.corpus import corpus_files, read_corpus
    from privfan.pipeline import score_corpus
    from privfan.scoring import PrivacyFanConfig, write_scores

    corpus = read_corpus(args.corpus)
    scores = score_corpus(corpus, PrivacyFanConfig(beta=args.beta, base_size=1, mi_bins=args.bins, label_bins=args.bins))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "scores.csv"
    write_scores(scores, path)
    _manifest(args.out, "score", args, inputs=corpus_files(args.corpus), outputs=[path])
    print(f"wrote {len(scores)} channel scores to {path}")


def _partition_from(args, corpus=None):
    from privfan.scoring import PrivacyFanConfig, partition, read_scores

    if args.scores is None or not Path(args.scores).is_file():
        raise FileNotFoundError(f"score table not found: {args.scores} (run `privfan score` first)")
    cfg = PrivacyFanConfig(beta=args.beta, base_size=_base_size(args, corpus))
    return partition(read_scores(args.scores, beta=args.beta), cfg)


def cmd_partition(args):
    from privfan.corpus import read_corpus
    from privfan.pipeline import save_partition

    corpus = read_corpus(args.corpus) if args.corpus else None
    part = _partition_from(args, corpus)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "partition.json"
    save_partition(part, path)
    _manifest(args.out, "partition", args, inputs=[args.scores], outputs=[path])
    print(f"base: {len(part.base)} channels, enhancement: {len(part.enhancement)} channels")


def cmd_encode(args):
    from privfan.corpus import read_corpus
    from privfan.layered import encode_tensor
    from privfan.tensor import load_tensor

    if args.scores is None:
        raise FileNotFoundError("encode needs a score table (--scores); run `privfan score` first")
    corpus = None
    if args.corpus:
        corpus = read_corpus(args.corpus)
        items = [(s.image_id, s.tensor) for s in corpus.scenes]
        inputs = [args.corpus / f"{i}.pft" for i, _ in items]
    elif args.tensor:
        items = [(Path(p).stem, load_tensor(p)) for p in args.tensor]
        inputs = list(args.tensor)
    else:
        raise UsageError("encode needs --corpus or one or more --tensor files")
    part = _partition_from(args, corpus)
    args.out.mkdir(parents=True, exist_ok=True)
    outputs, total = [], 0
    for image_id, tensor in items:
        stream = encode_tensor(tensor, part, args.base_qp, args.qp, args.codec, args.encoder_cmd)
        path = args.out / f"{image_id}.pfan"
        blob = stream.to_bytes()
        path.write_bytes(blob)
        outputs.append(path)
        total += len(blob)
    _manifest(args.out, "encode", args, inputs=inputs + [args.scores], outputs=outputs)
    print(f"encoded {len(outputs)} tensors, {total} bytes")


def cmd_decode(args):
    from privfan.layered import decode_stream
    from privfan.tensor import save_tensor

    args.out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for src in args.streams:
        stream = LayeredBitstream.from_bytes(Path(src).read_bytes())
        path = args.out / f"{Path(src).stem}.pft"
        save_tensor(decode_stream(stream, args.decoder_cmd), path)
        outputs.append(path)
    _manifest(args.out, "decode", args, inputs=args.streams, outputs=outputs)
    print(f"decoded {len(outputs)} streams into {args.out}")


def cmd_metrics(args):
    from privfan.corpus import read_corpus
    from privfan.pipeline import evaluate
    from privfan.tensor import load_tensor

    corpus = read_corpus(args.corpus)
    decoded, inputs = {}, []
    for image_id in corpus.ids:
        path = args.decoded / f"{image_id}.pft"
        if not path.is_file():
            raise FileNotFoundError(f"no decoded tensor for {image_id} in {args.decoded}")
        decoded[image_id] = load_tensor(path)
        inputs.append(path)
    ev = evaluate(corpus, decoded)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "metrics.json"
    path.write_text(json.dumps({"miou": ev.miou, "rmse": ev.rmse, "cra": ev.cra}, indent=1))
    _manifest(args.out, "metrics", args, inputs=inputs, outputs=[path])
    print(f"mIoU={ev.miou}  RMSE={ev.rmse}  CRA={ev.cra}")


def cmd_blur_sweep(args):
    from privfan import harness
    from privfan.blur import blur_sweep, write_sweep_csv
    from privfan.corpus import corpus_files, read_corpus

    corpus = read_corpus(args.corpus)
    items = [(s.image_id, s.image, s.annotations) for s in corpus.scenes if s.image is not None and s.annotations]
    if not items:
        raise ValueError("blur sweep needs scenes with images and plate annotations")
    rows = blur_sweep(items, args.sigmas, harness.recognize_plates)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "blur.csv"
    write_sweep_csv(rows, path)
    outputs = [path]
    if args.plots:
        from privfan.report import plot_blur

        outputs.append(plot_blur(rows, args.out / "blur.svg"))
    _manifest(args.out, "blur-sweep", args, inputs=corpus_files(args.corpus), outputs=outputs)
    for r in rows:
        print(f"sigma={r['sigma']:g}  mse={r['mse']:.6g}  cra={r['cra']:.2f}")


def cmd_sweep(args):
    from privfan.corpus import read_corpus
    from privfan.pipeline import RunConfig, run_sweep

    corpus = read_corpus(args.corpus)
    cfg = RunConfig(
        corpus=args.corpus, output=args.out, beta=args.beta, base_size=_base_size(args, corpus),
        base_qp=args.base_qp, enhancement_qps=args.qps, codec=args.codec, seed=args.seed, workers=args.workers,
        template_encoder=args.encoder_cmd, template_decoder=args.decoder_cmd, scores=args.scores,
    )
    rows = run_sweep(corpus, cfg, plots=args.plots, run_id=args.run_id)
    for r in rows:
        print(f"qp={r['qp']}  bytes={r.get('total_bytes')}  miou={r.get('miou')}  rmse={r.get('rmse')}  "
              f"cra={r.get('cra')}  {r['error']}")
    return EXIT_DATA if all(r["error"] for r in rows) else EXIT_OK


def cmd_serve(args):
    from privfan.transport import StreamServer

    with StreamServer(args.out, args.host, args.port) as server:
        print(f"listening on {args.host}:{server.port}", flush=True)
        server.serve(args.max_connections)
    _manifest(args.out, "serve", args, outputs=server.received)
    print(f"received {len(server.received)} streams")
    return EXIT_DATA if server.errors else EXIT_OK


def cmd_send(args):
    from privfan.transport import send_files

    for p in args.streams:
        LayeredBitstream.from_bytes(Path(p).read_bytes())  # refuse to ship garbage
    n = send_files(args.host, args.port, args.streams)
    print(f"sent {n} streams")


# --- parser -----------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="privfan", description=__doc__.split("\n")[0])
    parser.add_argument("--config", type=Path, help="key = value file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    def fan_opts(p):
        p.add_argument("--beta", type=float, default=10.0)
        p.add_argument("--base-size", type=int, default=None, help="C'; default from corpus metadata, else 179")

    def codec_opts(p):
        p.add_argument("--codec", type=_codec, default="internal", help="internal | external")
        p.add_argument("--encoder-cmd", default=None, help="external encoder template")
        p.add_argument("--decoder-cmd", default=None, help="external decoder template")

    p = add("synth", cmd_synth, "generate a synthetic harness corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--plates", type=int, default=2)
    p.add_argument("--ink", type=float, default=0.75)

    p = add("score", cmd_score, "compute per-channel MI / dMSE / Lagrangian table")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--bins", type=int, default=32)

    p = add("partition", cmd_partition, "split channels into base and enhancement sets")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    fan_opts(p)

    p = add("encode", cmd_encode, "encode tensors into layered streams")
    p.add_argument("--corpus", type=Path, default=None)
    p.add_argument("--tensor", type=Path, action="append", default=None)
    p.add_argument("--scores", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--base-qp", type=int, default=20)
    p.add_argument("--qp", type=int, default=40, help="enhancement QP")
    fan_opts(p)
    codec_opts(p)

    p = add("decode", cmd_decode, "decode layered streams back to tensors")
    p.add_argument("streams", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--decoder-cmd", default=None)

    p = add("metrics", cmd_metrics, "task metrics of decoded tensors")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--decoded", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("blur-sweep", cmd_blur_sweep, "plate recognition under Gaussian blur")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--sigmas", type=_float_list, default="0.5,1,2,3,4,5")
    p.add_argument("--plots", action="store_true")

    p = add("sweep", cmd_sweep, "rate / accuracy / privacy sweep over enhancement QP")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scores", type=Path, default=None, help="reuse a score table instead of scoring")
    p.add_argument("--base-qp", type=int, default=20)
    p.add_argument("--qps", type=_int_list, default="40,30,20,10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--run-id", default=None)
    p.add_argument("--plots", action="store_true")
    fan_opts(p)
    codec_opts(p)

    p = add("serve", cmd_serve, "receive layered streams over TCP")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9009)
    p.add_argument("--max-connections", type=int, default=None)

    p = add("send", cmd_send, "send layered stream files to a server")
    p.add_argument("streams", nargs="+", type=Path)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9009)

    return parser, subs


def parse_args(argv=None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        values = read_config_file(args.config)
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"privfan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"privfan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"privfan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CodecUnavailableError as exc:
        print(f"privfan: external codec unavailable: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (PrivfanError, ValueError, OSError, KeyError) as exc:
        print(f"privfan: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
