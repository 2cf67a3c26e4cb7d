"""Command-line entry point: ``python -m rxnvae.main <command> [flags]``.

Commands: gen-data, train, sample, exec, optimize, eval-synth. Each writes its
outputs, a run log (``<out>.log``) and one manifest (``<out>.manifest.json``);
a failed command still writes its manifest with ``status: "failed"``.
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from . import bayesopt
from .config import load_settings, override
from .dataset import Dataset, load_dataset, load_reaction_trees, save_dataset, save_samples
from .errors import VALIDATION_ERRORS, RxnVAEError
from .executor import execute_many, metrics_from_results, oracle_quality_hook, synthesizability_eval, write_trace
from .generator import generate_toy_dataset
from .logger import RunLogger
from .providers.oracle import OracleBackend, OracleClient
from .scoring import get_scorer
from .state import ExitCode
from .utils import content_hash, ensure_parent_dir, get_iso_timestamp
from .vae import RxnTreeVAE, evaluate_loss, load_model, sample_prior, save_model, train
from .version import VERSION

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    config: dict
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    checkpoint_sha256: str = None
    results: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    status: str = "ok"
    error: str = None
    version: str = VERSION

    def write(self, path):
        ensure_parent_dir(path)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(int(ExitCode.VALIDATION_ERROR))


class Run:
    """Per-command context: settings, run log and manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.out = args.out
        self._client = None
        self.run_logger = RunLogger(f"{self.out}.log", ui_callback=self._echo if args.verbose else None)
        self.manifest = RunManifest(command=args.command, argv=list(argv), seed=args.seed, config={},
                                    started=get_iso_timestamp())
        self.settings = None

    def start(self):
        self.run_logger.log_event("START", self.args.command, suffix=f"seed {self.args.seed}")
        self.settings = load_settings(self.args.config)
        self.manifest.config = self.settings.to_dict()

    @staticmethod
    def _echo(line):
        print(line, file=sys.stderr)

    @property
    def model_config(self):
        a = self.args
        return override(self.settings.model, seed=a.seed, epochs=getattr(a, "epochs", None),
                        batch_size=getattr(a, "batch_size", None), latent_dim=getattr(a, "latent_dim", None),
                        hidden_dim=getattr(a, "hidden_dim", None), lr=getattr(a, "lr", None),
                        kl_warmup_epochs=getattr(a, "kl_warmup_epochs", None),
                        use_step_context=True if getattr(a, "use_step_context", False) else None)

    @property
    def limits(self):
        a = self.args
        return override(self.settings.limits, jt_max_nodes=getattr(a, "jt_max_nodes", None),
                        rxn_max_depth=getattr(a, "rxn_max_depth", None),
                        rxn_max_nodes=getattr(a, "rxn_max_nodes", None))

    def client(self):
        if self.args.oracle and self._client is None:
            self._client = OracleClient(self.args.oracle, timeout=self.settings.oracle_timeout_s)
        return self._client

    def backend(self):
        client = self.client()
        return OracleBackend(client) if client is not None else None

    def finish(self, **results):
        self.manifest.results.update(results)
        self._write_manifest()
        self.run_logger.log_event("END", self.args.command)

    def fail(self, error):
        self.manifest.status = "failed"
        self.manifest.error = f"{type(error).__name__}: {error}"
        self.run_logger.log_event("FAIL", self.args.command, suffix=type(error).__name__)
        self._write_manifest()

    def _write_manifest(self):
        self.manifest.finished = get_iso_timestamp()
        self.manifest.outputs.setdefault("run_log", f"{self.out}.log")
        self.manifest.write(f"{self.out}.manifest.json")

    def close(self):
        if self._client is not None:
            self._client.close()
            self._client = None


def _load_checkpoint(run):
    path = run.args.checkpoint
    run.manifest.inputs["checkpoint"] = path
    run.manifest.checkpoint_sha256 = content_hash(path)
    model = load_model(path)
    if run.args.use_step_context:
        model.config = override(model.config, use_step_context=True)
    return model


# ---------------------------------------------------------------- commands

def cmd_gen_data(run):
    a = run.args
    gen = override(run.settings.generator, n_templates=a.templates, n_start_molecules=a.start_molecules,
                   max_depth=a.max_depth, frequency_floor=a.frequency_floor)
    if a.no_frequency_floor:
        gen = override(gen, apply_frequency_floor=False)
    run.manifest.config["generator"] = gen.to_dict()
    vocab, pairs = generate_toy_dataset(a.seed, a.trees, gen.n_templates, gen.n_start_molecules, gen.max_depth,
                                        gen.frequency_floor, gen.apply_frequency_floor)
    save_dataset(Dataset(vocab, pairs), a.out)
    run.manifest.outputs["dataset"] = a.out
    run.run_logger.log_event("DATA", f"{len(pairs)} trees, {vocab.n_templates} templates, "
                                     f"{vocab.n_starting} starting molecules")
    run.finish(n_trees=len(pairs))


def cmd_train(run):
    a = run.args
    dataset = load_dataset(a.data)
    run.manifest.inputs["data"] = a.data
    config = run.model_config
    run.manifest.config["model"] = config.to_dict()
    model = RxnTreeVAE(config, dataset.vocab)
    log.info("Training %r on %d pairs", model, len(dataset))
    report = train(model, dataset.pairs, config, run_logger=run.run_logger, progress=not a.quiet)
    save_model(model, a.out)
    report_path = a.report or f"{a.out}.train.csv"
    report.write_csv(report_path)
    # score what was written: parameters are stored as float32
    final = evaluate_loss(load_model(a.out), dataset.pairs, beta=report.last.beta, seed=a.seed)
    run.manifest.outputs.update(checkpoint=a.out, sidecar=f"{a.out}.json", train_report=report_path)
    run.manifest.checkpoint_sha256 = content_hash(a.out)
    run.finish(final_eval=final, last_epoch=asdict(report.last))


def _reference(path):
    if not path:
        return set(), None
    dataset = load_dataset(path)
    return dataset.products(), ([p.reaction for p in dataset.pairs], [p.product for p in dataset.pairs])


def cmd_sample(run):
    a = run.args
    model = _load_checkpoint(run)
    training_products, reference = _reference(a.data)
    if a.data:
        run.manifest.inputs["data"] = a.data
    rng = np.random.default_rng(a.seed)
    pairs = sample_prior(model, a.n, rng, run.limits, greedy=a.greedy)
    results = execute_many([p.reaction for p in pairs], model.vocab, run.backend(), a.threads)
    client = run.client()
    hook = oracle_quality_hook(client) if client is not None and a.oracle_quality else None
    report = metrics_from_results([p.reaction for p in pairs], results, training_products, hook,
                                  reference, model.vocab.n_templates)
    save_samples(a.out, model.vocab, pairs, results)
    metrics_path = a.metrics or f"{a.out}.metrics.json"
    ensure_parent_dir(metrics_path)
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(report.to_json() + "\n")
    run.manifest.outputs.update(samples=a.out, metrics=metrics_path)
    if a.trace:
        write_trace(results, a.trace)
        run.manifest.outputs["trace"] = a.trace
    run.run_logger.log_event("SAMPLE", f"n={a.n} validity={report.validity:.1f}% "
                                       f"uniqueness={report.uniqueness:.1f}% novelty={report.novelty:.1f}%")
    run.finish(metrics=report.to_dict())


def cmd_exec(run):
    a = run.args
    vocab, trees = load_reaction_trees(a.trees)
    run.manifest.inputs["trees"] = a.trees
    results = execute_many(trees, vocab, run.backend(), a.threads)
    ensure_parent_dir(a.out)
    with open(a.out, "w", encoding="utf-8", newline="\n") as f:
        json.dump([r.to_dict() for r in results], f, indent=1)
        f.write("\n")
    run.manifest.outputs["results"] = a.out
    if a.trace:
        write_trace(results, a.trace)
        run.manifest.outputs["trace"] = a.trace
    n_valid = sum(r.valid for r in results)
    run.run_logger.log_event("EXEC", f"{n_valid}/{len(results)} valid")
    run.finish(n_trees=len(results), n_valid=n_valid)


def cmd_optimize(run):
    a = run.args
    model = _load_checkpoint(run)
    dataset = load_dataset(a.data)
    run.manifest.inputs["data"] = a.data
    bo_config = override(run.settings.bo, iterations=a.bo_iters, batch_per_iter=a.bo_batch, seed=a.seed)
    run.manifest.config["bo"] = bo_config.to_dict()
    scorer = get_scorer(a.scorer, run.client())
    backend = run.backend()

    proposals = bayesopt.bo_loop(model, scorer, dataset.pairs, bo_config, backend, run.limits, run.run_logger,
                                 log_path=a.out, threads=a.threads, progress=not a.quiet)
    budget = bo_config.iterations * bo_config.batch_per_iter
    baseline = bayesopt.random_search(model, scorer, budget, np.random.default_rng(a.seed + 1), backend,
                                      run.limits, a.threads)
    summary = bayesopt.summarize(proposals, baseline)

    summary_path = f"{a.out}.summary.json"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary.to_dict(), f, indent=2)
        f.write("\n")
    hist_path = f"{a.out}.hist.csv"
    rows = bayesopt.score_histogram_rows([p.score for p in baseline if p.valid],
                                         [p.score for p in proposals if p.valid])
    with open(hist_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "random", "bo"])
        writer.writerows(rows)
    run.manifest.outputs.update(bo_log=a.out, summary=summary_path, histogram=hist_path)
    run.finish(top10_mean=summary.top10_mean, random_top10_mean=summary.random_top10_mean,
               best=summary.best)


def cmd_eval_synth(run):
    a = run.args
    model = _load_checkpoint(run)
    rng = np.random.default_rng(a.seed)
    report = synthesizability_eval(model, a.n, a.k_decodes, run.backend(), rng, run.limits,
                                   greedy=a.greedy, progress=not a.quiet)
    ensure_parent_dir(a.out)
    with open(a.out, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write("\n")
    run.manifest.outputs["report"] = a.out
    run.run_logger.log_event("SYNTH", f"rate={report.rate:.2f}% single={report.single_sample_validity:.2f}%")
    run.finish(rate=report.rate, single_sample_validity=report.single_sample_validity)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "exec": cmd_exec,
    "optimize": cmd_optimize,
    "eval-synth": cmd_eval_synth,
}


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="primary output path")
    p.add_argument("--config", default=None, help="settings JSON (default: rxnvae/settings.json)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--oracle", default=None, help="tcp://host:port or cmd:<command>")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--quiet", action="store_true", help="no progress bars")


def _limits(p):
    p.add_argument("--jt-max-nodes", type=int)
    p.add_argument("--rxn-max-depth", type=int)
    p.add_argument("--rxn-max-nodes", type=int)
    p.add_argument("--use-step-context", action="store_true")


def build_parser():
    parser = _Parser(prog="rxnvae", description="Reaction-tree VAE toolkit")
    parser.add_argument("--version", action="version", version=VERSION)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--trees", type=int, default=2000)
    p.add_argument("--templates", type=int)
    p.add_argument("--start-molecules", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--frequency-floor", type=int)
    p.add_argument("--no-frequency-floor", action="store_true")

    p = sub.add_parser("train", help="train a model, write checkpoint and report")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--kl-warmup-epochs", type=int)
    p.add_argument("--use-step-context", action="store_true")
    p.add_argument("--report", default=None, help="TrainReport CSV (default <out>.train.csv)")

    p = sub.add_parser("sample", help="sample from the prior and report metrics")
    _common(p)
    _limits(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="training dataset for novelty and descriptor distance")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--metrics", default=None)
    p.add_argument("--trace", default=None, help="write per-step JSON lines here")
    p.add_argument("--oracle-quality", action="store_true", help="use the oracle filter as quality hook")

    p = sub.add_parser("exec", help="execute reaction trees from a dataset or samples file")
    _common(p)
    p.add_argument("--trees", required=True)
    p.add_argument("--trace", default=None)

    p = sub.add_parser("optimize", help="Bayesian optimization in latent space")
    _common(p)
    _limits(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--bo-iters", type=int)
    p.add_argument("--bo-batch", type=int)
    p.add_argument("--scorer", default="token", help="token, drug_likeness or oracle")

    p = sub.add_parser("eval-synth", help="modal-product synthesizability rate")
    _common(p)
    _limits(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--k-decodes", type=int, default=10)
    p.add_argument("--greedy", action="store_true")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        run = Run(args, argv)
        run.start()
        COMMANDS[args.command](run)
        return int(ExitCode.OK)
    except VALIDATION_ERRORS as e:
        log.error("%s", e)
        error, code = e, ExitCode.VALIDATION_ERROR
    except FileNotFoundError as e:
        log.error("missing input: %s", e.filename or e)
        error, code = e, ExitCode.VALIDATION_ERROR
    except (RxnVAEError, OSError) as e:
        log.error("%s: %s", type(e).__name__, e)
        error, code = e, ExitCode.RUNTIME_ERROR
    finally:
        if run is not None:
            run.close()
    if run is not None:
        try:
            run.fail(error)
        except OSError as e:
            log.error("could not write the failure manifest: %s", e)
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
