"""Command-line front end: train / eval / streamline / simulate / sweep / fetch-data.

Exit codes: 0 success, 2 usage or argument errors, 3 I/O or parse errors,
4 training divergence, 5 equivalence-verification failure, 6 sweep finished
with per-point failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import container, datasets, hwsim, model, streamline, sweep, trainer
from .errors import DivergedError, FormatError, QnnBenchError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_VERIFY = 5
EXIT_PARTIAL = 6


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnnbench", description="Quantized-MLP training, streamlining, and dataflow simulation benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one AxWy network")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist"])
    p.add_argument("--abits", type=int, required=True)
    p.add_argument("--wbits", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint file to continue from")
    p.add_argument("--limit", type=int, default=None, help="train on the first N samples only")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--milestones", type=_int_list, default=[90, 95])
    p.add_argument("--gamma", type=float, default=0.1)

    p = sub.add_parser("eval", help="error rate of a model on a test split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist"])
    p.add_argument("--data-dir", default=None)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("streamline", help="compile a model to an integer-only network")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output .qnn path")
    p.add_argument("--verify", type=int, default=0, metavar="N", help="check equivalence on N test images")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist"])
    p.add_argument("--data-dir", default=None)

    p = sub.add_parser("simulate", help="folded-dataflow performance/resource report")
    p.add_argument("--model", required=True, help="float or integer .qnn file")
    p.add_argument("--pe", type=int, required=True)
    p.add_argument("--simd", type=int, required=True)
    p.add_argument("--clock-mhz", type=float, default=hwsim.DEFAULT_CLOCK_MHZ)
    p.add_argument("--board", default="pynq-z1")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None, help="directory for report JSON + CSV")

    p = sub.add_parser("sweep", help="run the (abits,wbits) x (pe,simd) grid")
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist"])
    p.add_argument("--data-dir", default=None)
    p.add_argument("--bits", type=_int_list, default=list(range(2, 9)), help="bit values; grid is their square")
    p.add_argument("--folds", type=_int_list, default=[2, 8, 16], help="pe/simd values; grid is their square")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--parallel", type=int, default=0, metavar="K")
    p.add_argument("--clock-mhz", type=float, default=hwsim.DEFAULT_CLOCK_MHZ)
    p.add_argument("--board", default="pynq-z1")
    p.add_argument("--verify", type=int, default=0, metavar="N")

    p = sub.add_parser("fetch-data", help="stage dataset files locally and verify checksums")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "fashion-mnist"])
    p.add_argument("--data-dir", required=True)
    p.add_argument("--source", default=None, help="directory to copy from (default QNN_DATA_SOURCE or ./data)")

    return parser


def _load_any_model(path: str):
    """-> ('integer', IntegerNetwork) or ('float', NetworkSpec)."""
    manifest = container.load_container(path)
    if manifest.get("integer") == "true":
        return "integer", streamline.load_integer_network(path)
    return "float", model.network_from_manifest(manifest)


def cmd_train(args) -> int:
    net = model.build_mlp(args.abits, args.wbits, seed=args.seed)
    cfg = trainer.TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        milestones=tuple(args.milestones),
        gamma=args.gamma,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    data = datasets.load_dataset(args.dataset, args.data_dir, limit=args.limit)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "train_log.csv")
    if args.resume is None and os.path.exists(log_path):
        os.remove(log_path)
    net, log = trainer.train(
        net,
        data,
        cfg,
        checkpoint_path=os.path.join(args.out, "checkpoint.qnn"),
        resume_from=args.resume,
        log_path=log_path,
    )
    model_path = os.path.join(args.out, "model.qnn")
    model.save_model(net, model_path)
    print(f"trained {net.name} for {len(log)} epochs: test error {log.test_error[-1]:.2f}%")
    print(f"model: {model_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, net = _load_any_model(args.model)
    if not isinstance(net, model.NetworkSpec):
        raise ValueError("eval expects a float model file (integer networks carry no eval-mode statistics)")
    data = datasets.load_dataset(args.dataset, args.data_dir)
    error = trainer.evaluate(net, data)
    if args.json:
        with open(args.model, "rb") as f:
            digest = hashlib.sha256(f.read()).hexdigest()[:16]
        print(json.dumps({"error_percent": error, "n_test": data.n_test, "model_hash": digest}))
    else:
        print(f"test error: {error:.2f}% ({data.n_test} images)")
    return EXIT_OK


def cmd_streamline(args) -> int:
    kind, net = _load_any_model(args.model)
    if kind == "integer":
        raise ValueError(f"{args.model} is already an integer network")
    inet = streamline.streamline(net)
    streamline.save_integer_network(inet, args.out)
    for w in inet.saturation_warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"streamlined {net.name} -> {args.out} ({len(inet.layers)} integer layers)")
    if args.verify:
        data = datasets.load_dataset(args.dataset, args.data_dir)
        n = min(args.verify, data.n_test)
        inputs = datasets.normalize(data.test_images[:n]).reshape(n, -1)
        report = streamline.verify_equivalence(net, inet, inputs)
        if not report.ok:
            report_path = args.out + ".verify.json"
            with open(report_path, "w", encoding="utf-8") as f:
                json.dump(
                    {
                        "n_inputs": report.n_inputs,
                        "hidden_mismatches": report.hidden_mismatches,
                        "argmax_mismatches": report.argmax_mismatches,
                        "details": report.details,
                    },
                    f,
                    indent=2,
                )
            print(
                f"verification FAILED: {report.hidden_mismatches} hidden / "
                f"{report.argmax_mismatches} argmax mismatches on {n} images ({report_path})",
                file=sys.stderr,
            )
            return EXIT_VERIFY
        print(f"verified bit-exact equivalence on {n} test images")
    return EXIT_OK


def cmd_simulate(args) -> int:
    kind, net = _load_any_model(args.model)
    if kind == "float":
        net = streamline.streamline(net)
    budget = hwsim.board_preset(args.board)
    report = hwsim.simulate(net, args.pe, args.simd, budget=budget, clock_mhz=args.clock_mhz)
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        d = report.to_dict()
        print(f"{d['name']} pe={d['pe']} simd={d['simd']} @ {d['clock_mhz']} MHz on {d['board']}")
        print(f"  initiation interval: {d['ii_cycles']} cycles")
        print(f"  throughput:          {d['img_per_s']:.1f} img/s")
        print(f"  dram in:             {d['dram_MB_s']:.2f} MB/s")
        print(f"  luts={d['luts']} ffs={d['ffs']} bram18={d['bram18']} fits={d['fits']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "simulate_report.json"), "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2)
        with open(os.path.join(args.out, "simulate_report.csv"), "w", encoding="utf-8", newline="") as f:
            f.write(",".join(hwsim.CSV_COLUMNS) + "\n")
            f.write(",".join(str(v) for v in report.csv_row()) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    plan = sweep.SweepPlan(
        out_dir=args.out,
        dataset=args.dataset,
        data_dir=args.data_dir,
        bit_pairs=tuple((a, w) for a in args.bits for w in args.bits),
        fold_pairs=tuple((p, s) for p in args.folds for s in args.folds),
        epochs=args.epochs,
        seed=args.seed,
        limit=args.limit,
        clock_mhz=args.clock_mhz,
        board=args.board,
        verify_n=args.verify,
    )
    result = sweep.run_sweep(plan, parallel=args.parallel)
    done = sum(1 for r in result.manifest["runs"].values() if r.get("status") == "done")
    print(f"sweep: {done}/{len(plan.bit_pairs)} points complete")
    print(f"accuracy: {result.accuracy_csv}")
    print(f"hardware: {result.hardware_csv}")
    if result.failures:
        for name, error in result.failures:
            print(f"FAILED {name}: {error}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_fetch_data(args) -> int:
    dest = datasets.fetch_dataset(args.dataset, args.data_dir, args.source)
    print(f"{args.dataset} ready in {dest} (checksums verified)")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "streamline": cmd_streamline,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "fetch-data": cmd_fetch_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except QnnBenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
