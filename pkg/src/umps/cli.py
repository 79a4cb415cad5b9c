"""``umps`` command line interface.

Commands: ``gs``, ``evolve``, ``excite``, ``spectral``, ``dos``, ``expand``, ``info``.
Exit codes: 0 success, 2 configuration error, 3 convergence failure,
4 numerical failure, 5 I/O error.
"""

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import excite, io, models, spectral, tdvp
from .core import (UmpsState, correlation_length, fixed_points, random_tensor, schmidt_values)
from .errors import ArgumentError, ConvergenceError, UmpsError

log = logging.getLogger("umps")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5
MANIFEST = "manifest.json"


# --------------------------------------------------------------- parsing helpers


def parse_kv(text, what):
    """``"a=1,b=2"`` to ``{"a": "1", "b": "2"}``."""
    out = {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in part:
            raise ArgumentError(f"{what}: expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def parse_float(text, what):
    t = str(text).strip().lower()
    sign = -1.0 if t.startswith("-") else 1.0
    t = t.lstrip("+-")
    try:
        if t == "pi":
            return sign * np.pi
        if t.endswith("pi"):
            return sign * float(t[:-2].rstrip("*")) * np.pi
        if "pi/" in t:
            return sign * np.pi / float(t.split("/", 1)[1])
        return sign * float(t)
    except ValueError:
        raise ArgumentError(f"{what}: cannot parse number {text!r}") from None


def parse_model(model_spec):
    """``bb:theta=..,J=..``, ``heisenberg[:J=..]``, ``aklt``, ``tfi:g=..[,J=..]`` or ``file:<path>``."""
    if model_spec is None:
        raise ArgumentError("--model is required (or stored in the state archive)")
    kind, _, rest = model_spec.partition(":")
    kind = kind.strip().lower()
    if kind == "file":
        return models.load_hamiltonian(rest)
    kv = parse_kv(rest, f"--model {model_spec}")
    num = {k: parse_float(v, f"--model {k}") for k, v in kv.items()}
    allowed = {"bb": {"theta", "J"}, "heisenberg": {"J"}, "aklt": set(), "tfi": {"g", "J"}}
    if kind not in allowed:
        raise ArgumentError(f"--model: unknown model {kind!r}; choose from "
                            f"{sorted(allowed) + ['file']}")
    extra = set(num) - allowed[kind]
    if extra:
        raise ArgumentError(f"--model {kind}: unknown parameter(s) {sorted(extra)}")
    if kind == "bb":
        if "theta" not in num:
            raise ArgumentError("--model bb: theta is required")
        h = models.bilinear_biquadratic(num["theta"], num.get("J", 1.0))
    elif kind == "heisenberg":
        h = models.heisenberg(num.get("J", 1.0))
    elif kind == "aklt":
        h = models.aklt_hamiltonian()
    else:
        if "g" not in num:
            raise ArgumentError("--model tfi: g is required")
        h = models.transverse_field_ising(num["g"], num.get("J", 1.0))
    return h


def parse_block(text):
    if text is None:
        return 1
    kv = parse_kv(text, "--block") if "=" in text else {"K": text}
    try:
        K = int(kv.get("K", ""))
    except ValueError:
        raise ArgumentError(f"--block: expected K=<int>, got {text!r}") from None
    if K < 1:
        raise ArgumentError("--block: K must be positive")
    return K


def parse_grid(text):
    parts = text.split(":")
    if len(parts) != 3:
        raise ArgumentError(f"--wgrid: expected lo:hi:n, got {text!r}")
    lo, hi = parse_float(parts[0], "--wgrid"), parse_float(parts[1], "--wgrid")
    try:
        n = int(parts[2])
    except ValueError:
        raise ArgumentError(f"--wgrid: point count must be an integer, got {parts[2]!r}") from None
    if n < 2 or not hi > lo:
        raise ArgumentError(f"--wgrid: need hi > lo and n >= 2, got {text!r}")
    return np.linspace(lo, hi, n)


def momentum_list(args):
    if args.p is not None:
        ps = [parse_float(v, "--p") for v in args.p.split(",") if v.strip()]
        if not ps:
            raise ArgumentError("--p: empty list")
        return np.array(ps)
    if args.pgrid < 1:
        raise ArgumentError("--pgrid must be positive")
    return excite.momentum_grid(args.pgrid)


def parse_operator(text, d):
    ops = models.spin_operators((d - 1) / 2)
    table = {"sz": ops.Sz, "sx": ops.Sx, "sy": ops.Sy, "sp": ops.Sp, "sm": ops.Sm}
    if text.startswith("file:"):
        path = text[5:]
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArgumentError(f"{path}: JSON parse error at line {exc.lineno}, column "
                                f"{exc.colno}: {exc.msg}") from exc
        m = obj.get("matrix") if isinstance(obj, dict) else None
        if not isinstance(m, list):
            raise ArgumentError(f"{path}: $.matrix must be a list of [re, im] pairs")
        n = int(round(np.sqrt(len(m))))
        if n * n != len(m):
            raise ArgumentError(f"{path}: $.matrix length {len(m)} is not a square")
        try:
            vals = np.array([complex(z[0], z[1]) for z in m])
        except (TypeError, IndexError, ValueError):
            raise ArgumentError(f"{path}: $.matrix entries must be [re, im] pairs") from None
        return vals.reshape(n, n)
    if text.lower() not in table:
        raise ArgumentError(f"--op: unknown operator {text!r}; choose from {sorted(table)} or file:")
    return table[text.lower()]


# ----------------------------------------------------------------- manifest


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, (complex, np.complexfloating)):
        return [float(o.real), float(o.imag)]
    return str(o)


class Run:
    """Bookkeeping for one command: outputs, diagnostics and the manifest."""

    def __init__(self, args, argv):
        self.args = args
        self.t0 = time.time()
        self.outputs = []
        self.diagnostics = {}
        cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
        self.config = cfg
        self.config_hash = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()
                                          ).hexdigest()
        self.argv = list(argv)

    def reference(self):
        return f"manifest={MANIFEST} config_sha256={self.config_hash}"

    def output(self, path):
        self.outputs.append(os.fspath(path))
        return path

    def manifest_path(self):
        if self.outputs:
            return os.path.join(os.path.dirname(os.path.abspath(self.outputs[0])), MANIFEST)
        return None

    def finish(self, status=0):
        path = self.manifest_path()
        if path is None:
            return
        obj = {"command": self.args.command, "argv": self.argv, "config": self.config,
               "config_sha256": self.config_hash, "version": __version__,
               "wall_time_s": round(time.time() - self.t0, 3), "exit_code": status,
               "outputs": [os.path.basename(o) for o in self.outputs],
               "diagnostics": self.diagnostics}
        io.atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=True, default=_json_default))


def load_state_arg(path):
    try:
        A, header = io.load_state(path)
    except FileNotFoundError as exc:
        raise io.ArchiveError(f"{path}: no such file") from exc
    return A, header


def model_for(args, header=None):
    model_spec = args.model
    if model_spec is None and header is not None:
        model_spec = (header.get("model_metadata") or {}).get("model")
    return parse_model(model_spec), model_spec


def pmap(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ commands


def cmd_gs(args, run):
    h, model_spec = model_for(args)
    rng = np.random.default_rng(args.seed)
    A0 = random_tensor(args.D, h.d, rng)
    logf = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        if logf:
            logf.write(json.dumps({"type": "header", "ref": run.reference()}) + "\n")
        cfg = tdvp.EvolutionConfig("imaginary", args.dt, args.scheme, np.inf, args.tol_eta,
                                   max_steps=args.max_steps, record_every=args.record_every)
        traj = tdvp.evolve(A0, h, cfg, log=logf)
    finally:
        if logf:
            logf.close()
            run.output(args.log)
    last = traj.records[-1]
    eps = tdvp.error_epsilon_stable(traj.A, traj.fp, h)[0]
    run.diagnostics.update(energy=last["energy"], eta=last["eta"], eps=eps,
                           steps=last["step"], converged=traj.converged)
    io.save_state(run.output(args.out), traj.A, "none",
                  {"model": model_spec, "ref": run.reference(), "energy": last["energy"]})
    print(f"energy {last['energy']:.15f}  eta {last['eta']:.3e}  eps {eps:.3e}  "
          f"steps {last['step']}  -> {args.out}")
    if not traj.converged:
        raise ConvergenceError(f"eta {last['eta']:.3e} above {args.tol_eta} after "
                               f"{args.max_steps} steps")


def cmd_evolve(args, run):
    A, header = load_state_arg(args.state)
    h, model_spec = model_for(args, header)
    expand = None
    if args.expand:
        kv = parse_kv(args.expand, "--expand")
        try:
            expand = tdvp.ExpandConfig(int(kv["D"]), float(kv.get("eps", 0.0)))
        except (KeyError, ValueError):
            raise ArgumentError(f"--expand: expected D=<int>,eps=<float>, got {args.expand!r}") from None
    cfg = tdvp.EvolutionConfig(args.mode, args.dt, args.scheme, args.tmax, args.tol_eta, expand,
                               max_steps=args.max_steps, record_every=args.record_every)
    obs = [o for o in (args.observables or "").split(",") if o]
    logf = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        if logf:
            logf.write(json.dumps({"type": "header", "ref": run.reference()}) + "\n")
        traj = tdvp.evolve(A, h, cfg, obs, log=logf)
    finally:
        if logf:
            logf.close()
            run.output(args.log)
    last = traj.records[-1]
    run.diagnostics.update(energy=last["energy"], eta=last["eta"], eps=last["eps"], t=last["t"],
                           D=last["D"])
    if args.out:
        io.save_state(run.output(args.out), traj.A, "none", {"model": model_spec, "ref": run.reference()})
    print(f"t {last['t']:.6g}  energy {last['energy']:.15f}  eta {last['eta']:.3e}  D {last['D']}")


def cmd_excite(args, run):
    K = parse_block(args.block)
    ps = momentum_list(args)
    A, header = load_state_arg(args.state)
    h, model_spec = model_for(args, header)
    state = UmpsState.from_tensor(A)
    state2 = None
    if args.sector == "domainwall":
        if not args.state2:
            raise ArgumentError("--sector domainwall needs --state2")
        state2 = UmpsState.from_tensor(load_state_arg(args.state2)[0])
    log.info("block K=%d, memory estimate %.1f MB", K, 16 * state.D ** 2 * state.d ** (K + 2) / 1e6)

    def one(p):
        return excite.excitation_spectrum(state, h, [p], args.k, K, args.sector, state2,
                                          args.gauge, args.tol)

    results = pmap(one, list(ps), args.threads)
    lines = [f"# {run.reference()}", "p,branch_index,energy,residual,multiplicity_group"]
    lowest = []
    for r in results:
        for row in r.rows():
            lines.append(f"{float(row[0])!r},{int(row[1])},{float(row[2])!r},{float(row[3])!r},{int(row[4])}")
        lowest.append(float(r.energies[0][0]))
    io.atomic_write_text(run.output(args.out), "\n".join(lines) + "\n")
    run.diagnostics.update(ground_energy=results[0].ground_energy, K=K,
                           min_energy=float(min(lowest)), n_momenta=len(ps))
    print(f"{len(ps)} momenta, lowest excitation {min(lowest):.15f} -> {args.out}")


def cmd_spectral(args, run):
    A, header = load_state_arg(args.state)
    h, model_spec = model_for(args, header)
    K = parse_block(args.block)
    state = UmpsState.from_tensor(A)
    O = parse_operator(args.op, state.d)
    ps = momentum_list(args)
    omega = parse_grid(args.wgrid)

    def one(p):
        return spectral.spectral_function(state, h, O, [p], args.moments, omega, K, args.kernel)

    parts = pmap(one, list(ps), args.threads)
    sf = spectral.SpectralFunction(ps, omega, [s for part in parts for s in part.series],
                                   np.vstack([part.values for part in parts]),
                                   [g for part in parts for g in part.ground_components])
    spectral.write_spectral_csv(run.output(args.out), sf, run.reference())
    side = os.path.splitext(args.out)[0] + ".moments.json"
    spectral.write_moments_sidecar(run.output(side), sf, {"ref": run.reference(), "op": args.op})
    run.diagnostics.update(weights=[s.weight for s in sf.series],
                           resolution=min(s.resolution for s in sf.series))
    print(f"{len(ps)} momenta x {len(omega)} frequencies -> {args.out} (+ {side})")


def cmd_dos(args, run):
    p, omega, vals = spectral.read_spectral_csv(args.inp)
    side = os.path.splitext(args.inp)[0] + ".moments.json"
    series = spectral.read_moments_sidecar(side) if os.path.exists(side) else None
    if series is not None:
        series = sorted(series, key=lambda s: s.p)
    res = spectral.density_of_states(p, omega, vals, series)
    lines = [f"# {run.reference()}", "omega,N"]
    lines += [f"{float(w)!r},{float(v)!r}" for w, v in zip(res.omega, res.values)]
    io.atomic_write_text(run.output(args.out), "\n".join(lines) + "\n")
    run.diagnostics.update(weight=spectral.integrate(res.omega, res.values),
                           fringe_warning=res.fringe_warning)
    print(f"density of states on {len(omega)} points -> {args.out}"
          + ("  (warning: momentum grid too coarse)" if res.fringe_warning else ""))


def cmd_expand(args, run):
    A, header = load_state_arg(args.state)
    h, model_spec = model_for(args, header)
    A, fp = fixed_points(A)
    ex = tdvp.expand_bond(A, fp, h, args.D, args.dt, args.mode)
    A2, fp2 = fixed_points(ex.A)
    io.save_state(run.output(args.out), A2, "none", {"model": model_spec, "ref": run.reference()})
    run.diagnostics.update(truncation=ex.truncation, D=args.D)
    print(f"D {A.shape[1]} -> {args.D}, truncation {ex.truncation:.3e} -> {args.out}")


def cmd_info(args, run):
    A, header = load_state_arg(args.state)
    A, fp = fixed_points(A)
    cl = correlation_length(A, fp)
    out = {"d": int(A.shape[0]), "D": int(A.shape[1]), "xi": cl.xi,
           "schmidt": [float(s) for s in schmidt_values(fp)]}
    model_spec = args.model or (header.get("model_metadata") or {}).get("model")
    if model_spec:
        h = parse_model(model_spec)
        g = tdvp.gradient(A, fp, h)
        out.update(model=model_spec, energy=g.energy, eta=g.eta,
                   eps=tdvp.error_epsilon_stable(A, fp, h)[0])
    if args.json:
        print(json.dumps(out, indent=1))
    else:
        for k, v in out.items():
            if k == "schmidt":
                v = " ".join(f"{s:.6e}" for s in v)
            print(f"{k:8s} {v}")


# ------------------------------------------------------------------ parser


def build_parser():
    p = argparse.ArgumentParser(prog="umps", description="Uniform MPS toolkit.")
    p.add_argument("--version", action="version", version=f"umps {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; CLI flags take precedence")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads over momenta (1 for bit-stable output)")
    common.add_argument("--model", default=None)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gs", parents=[common], help="imaginary-time ground state")
    g.add_argument("-D", type=int, required=True)
    g.add_argument("--tol-eta", type=float, default=1e-10)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--scheme", choices=["euler", "isometric"], default="euler")
    g.add_argument("--max-steps", type=int, default=20000)
    g.add_argument("--record-every", type=int, default=1)
    g.add_argument("--log")
    g.add_argument("--out", default="state.umps")
    g.set_defaults(func=cmd_gs)

    e = sub.add_parser("evolve", parents=[common], help="real or imaginary time evolution")
    e.add_argument("--state", required=True)
    e.add_argument("--mode", choices=["real", "imaginary"], default="real")
    e.add_argument("--dt", type=float, default=1e-3)
    e.add_argument("--tmax", type=float, default=1.0)
    e.add_argument("--scheme", choices=["euler", "isometric"], default="isometric")
    e.add_argument("--tol-eta", type=float, default=1e-10)
    e.add_argument("--max-steps", type=int, default=10 ** 7)
    e.add_argument("--record-every", type=int, default=1)
    e.add_argument("--observables", default="")
    e.add_argument("--expand")
    e.add_argument("--log")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evolve)

    x = sub.add_parser("excite", parents=[common], help="variational excitation spectrum")
    x.add_argument("--state", required=True)
    x.add_argument("--pgrid", type=int, default=64)
    x.add_argument("--p", help="explicit comma-separated momenta, e.g. pi or 0,pi/2")
    x.add_argument("--k", type=int, default=4)
    x.add_argument("--block")
    x.add_argument("--sector", choices=["trivial", "domainwall"], default="trivial")
    x.add_argument("--state2")
    x.add_argument("--gauge", choices=["left", "right"], default="left")
    x.add_argument("--tol", type=float, default=1e-12)
    x.add_argument("--out", default="dispersion.csv")
    x.set_defaults(func=cmd_excite)

    s = sub.add_parser("spectral", parents=[common], help="Chebyshev spectral function")
    s.add_argument("--state", required=True)
    s.add_argument("--op", default="sx")
    s.add_argument("--pgrid", type=int, default=64)
    s.add_argument("--p")
    s.add_argument("--moments", type=int, default=500)
    s.add_argument("--kernel", choices=["jackson", "dirichlet"], default="jackson")
    s.add_argument("--wgrid", default="0:6:1200")
    s.add_argument("--block")
    s.add_argument("--out", default="specfn.csv")
    s.set_defaults(func=cmd_spectral)

    dd = sub.add_parser("dos", parents=[common], help="momentum-integrated density of states")
    dd.add_argument("--in", dest="inp", required=True)
    dd.add_argument("--out", default="dos.csv")
    dd.set_defaults(func=cmd_dos)

    b = sub.add_parser("expand", parents=[common], help="grow the bond dimension")
    b.add_argument("--state", required=True)
    b.add_argument("-D", type=int, required=True)
    b.add_argument("--dt", type=float, default=1.0)
    b.add_argument("--mode", choices=["real", "imaginary"], default="imaginary")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_expand)

    i = sub.add_parser("info", parents=[common], help="state diagnostics")
    i.add_argument("--state", required=True)
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_info)
    return p


def config_tokens(path, parser, command):
    """Turn a ``key = value`` file into argv tokens placed before the user's flags."""
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_string("[umps]\n" + fh.read(), source=path)
    except FileNotFoundError:
        raise io.ArchiveError(f"{path}: config file not found") from None
    except configparser.Error as exc:
        raise ArgumentError(f"{path}: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        raise ArgumentError(f"unknown command {command!r}")
    known = {a.dest: a for a in sub._actions}
    tokens = []
    for key, value in cp["umps"].items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            raise ArgumentError(f"{path}: unknown key {key!r} for command {command!r}")
        act = known[dest]
        flag = max(act.option_strings, key=len)
        if act.nargs == 0:
            if value.strip().lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
        else:
            tokens += [flag, value.strip()]
    return tokens


def _setup_logging():
    level = os.environ.get("UMPS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    given = list(argv)
    _setup_logging()
    parser = build_parser()
    run = None
    try:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config and argv and not argv[0].startswith("-"):
            # required flags may live in the file, so splice it in before parsing
            argv = [argv[0]] + config_tokens(known.config, parser, argv[0]) + argv[1:]
        args = parser.parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise ArgumentError("--threads must be positive")
        run = Run(args, given)
        args.func(args, run)
        run.finish(EXIT_OK)
        return EXIT_OK
    except SystemExit as exc:          # argparse
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    except UmpsError as exc:
        print(f"umps: error: {exc}", file=sys.stderr)
        if run is not None:
            run.finish(exc.exit_code)
        return exc.exit_code
    except OSError as exc:
        print(f"umps: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except np.linalg.LinAlgError as exc:
        print(f"umps: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
