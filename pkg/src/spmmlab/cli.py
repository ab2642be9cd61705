"""Command line front end.

A thin client: every command builds a request, sends it to the service, and
renders the response.  By default the service runs in-process; --server
points the same commands at a remote instance.
"""

from __future__ import annotations

import json
import sys

import click

from . import __version__
from .runner import SWEEP_COLUMNS, parse_random_spec, rows_to_csv


class ServiceClient:
    def __init__(self, server: str | None = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app

            self._client = TestClient(app)

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise click.UsageError(str(detail))
        return resp.json()


def _matrix_spec(matrix_path: str | None, random_spec: str | None) -> dict:
    if (matrix_path is None) == (random_spec is None):
        raise click.UsageError("provide exactly one of --matrix / --random")
    if matrix_path is not None:
        try:
            with open(matrix_path) as f:
                text = f.read()
        except OSError as e:
            raise click.UsageError(f"cannot read {matrix_path}: {e}") from None
        return {"matrix_market": text, "label": matrix_path}
    try:
        rows, cols, density, seed = parse_random_spec(random_spec)
    except ValueError as e:
        raise click.UsageError(str(e)) from None
    return {"random": {"rows": rows, "cols": cols, "density": density, "seed": seed}}


def _write_out(text: str, out: str | None):
    if out is None:
        click.echo(text, nl=not text.endswith("\n"))
    else:
        with open(out, "w") as f:
            f.write(text)


@click.group()
@click.version_option(__version__)
@click.option("--server", metavar="URL", default=None, help="Remote service URL; default runs the service in-process.")
@click.pass_context
def main(ctx, server):
    """Sparse-times-dense matrix multiply: design-space exploration, kernel
    emission, and deterministic simulation."""
    ctx.obj = server


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj)


@main.command()
@click.option("--matrix", "matrix_path", type=click.Path(), default=None, help="Matrix Market file for the sparse operand.")
@click.option("--random", "random_spec", metavar="RxC:DENSITY[:SEED]", default=None, help="Random sparse operand (seed falls back to $SGAP_SEED, then 0).")
@click.option("--point", required=True, help="Design-space point, e.g. 'nnz:1,col:1,r:32'.")
@click.option("--N", "n", default=4, show_default=True, help="Dense column count.")
@click.option("--p", default=256, show_default=True, help="Parallelism budget.")
@click.option("--tolerance", default=1e-4, show_default=True)
@click.option("--precision", default="double", type=click.Choice(["double", "single"]), show_default=True)
@click.option("--b-seed", default=0, show_default=True, help="Seed for the dense operand.")
@click.option("--dump-c", is_flag=True, help="Print the simulated output matrix.")
@click.pass_context
def verify(ctx, matrix_path, random_spec, point, n, p, tolerance, precision, b_seed, dump_c):
    """Simulate one point and compare against the dense reference."""
    payload = {
        "matrix": _matrix_spec(matrix_path, random_spec),
        "point": point,
        "n": n,
        "p": p,
        "tolerance": tolerance,
        "precision": precision,
        "b_seed": b_seed,
        "include_output": dump_c,
    }
    data = _client(ctx).post("/verify", payload)
    if data["status"] == "no_template":
        click.echo(f"NO-TEMPLATE {data['point']}: legal point without a template schedule")
        sys.exit(1)
    click.echo(f"{data['status'].upper()} max_rel_error={data['max_rel_error']:.3e}")
    if dump_c and data.get("output") is not None:
        vals = data["output"]
        for row_start in range(0, len(vals), n):
            click.echo(" ".join(f"{v:.17g}" for v in vals[row_start : row_start + n]))
    sys.exit(0 if data["status"] == "pass" else 1)


@main.command()
@click.option("--matrix", "matrix_paths", type=click.Path(), multiple=True, help="Matrix Market file; repeatable.")
@click.option("--random", "random_specs", metavar="RxC:DENSITY[:SEED]", multiple=True, help="Random sparse operand; repeatable.")
@click.option("--point", "points", multiple=True, help="Points to sweep; default is every legal point of the standard grid.")
@click.option("--N", "n", default=4, show_default=True)
@click.option("--p", default=256, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
@click.option("--precision", default="double", type=click.Choice(["double", "single"]), show_default=True)
@click.option("--b-seed", default=0, show_default=True)
@click.option("--format", "fmt", default="csv", type=click.Choice(["csv", "json"]), show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the report here instead of stdout.")
@click.pass_context
def sweep(ctx, matrix_paths, random_specs, points, n, p, tolerance, precision, b_seed, fmt, out):
    """Run many (matrix, point) combinations and tabulate the results."""
    specs = []
    local_errors = []
    for path in matrix_paths:
        try:
            with open(path) as f:
                specs.append({"matrix_market": f.read(), "label": path})
        except OSError as e:
            click.echo(f"warning: skipping {path}: {e}", err=True)
            local_errors.append({c: None for c in SWEEP_COLUMNS} | {
                "matrix": path, "point": "", "status": f"matrix_error: {e}",
            })
    for spec in random_specs:
        try:
            rows, cols, density, seed = parse_random_spec(spec)
        except ValueError as e:
            raise click.UsageError(str(e)) from None
        specs.append({"random": {"rows": rows, "cols": cols, "density": density, "seed": seed}})
    if not specs and not local_errors:
        raise click.UsageError("provide at least one --matrix or --random")

    payload = {
        "matrices": specs,
        "points": list(points) or None,
        "n": n,
        "p": p,
        "tolerance": tolerance,
        "precision": precision,
        "b_seed": b_seed,
    }
    data = _client(ctx).post("/sweep", payload) if specs else {"schema_version": 1, "rows": []}
    rows = data["rows"] + local_errors
    failures = [r for r in rows if str(r.get("status", "")).startswith(("fail", "matrix_error"))]
    for r in rows:
        if str(r.get("status", "")).startswith("matrix_error"):
            click.echo(f"warning: {r['matrix']}: {r['status']}", err=True)
    if fmt == "csv":
        _write_out(rows_to_csv(rows), out)
    else:
        _write_out(json.dumps({"schema_version": data["schema_version"], "rows": rows}), out)
    sys.exit(1 if failures else 0)


@main.command()
@click.option("--N", "n", default=4, show_default=True)
@click.option("--p", default=256, show_default=True)
@click.option("--g", "g_values", multiple=True, type=int, help="Data-amount parameters; default 2,4,8,16,32.")
@click.option("--c", "c_values", multiple=True, type=int, help="Column-amount parameters; default 1,2,4.")
@click.option("--r", "r_values", multiple=True, type=int, help="Group widths; default 1,2,4,8,16,32.")
@click.option("--rejected", "show_rejected", is_flag=True, help="Also list rejected points with their rule numbers.")
@click.option("--format", "fmt", default="table", type=click.Choice(["table", "json"]), show_default=True)
@click.pass_context
def enumerate(ctx, n, p, g_values, c_values, r_values, show_rejected, fmt):
    """List the design space: legal points (with template coverage) and,
    optionally, rule-tagged rejections."""
    payload = {"n": n, "p": p}
    if g_values:
        payload["g_values"] = list(g_values)
    if c_values:
        payload["c_values"] = list(c_values)
    if r_values:
        payload["r_values"] = list(r_values)
    data = _client(ctx).post("/enumerate", payload)
    if fmt == "json":
        click.echo(json.dumps(data))
        return
    for item in data["legal"]:
        family = item["family"] or "-"
        mark = "templated" if item["templated"] else "no_template"
        click.echo(f"{item['point']:24s} {family:16s} {mark}")
    if show_rejected:
        for item in data["rejected"]:
            click.echo(f"{item['point']:24s} illegal (rule {item['rule']})")
    click.echo(
        f"# {len(data['legal'])} legal, {len(data['rejected'])} rejected, "
        f"{sum(1 for x in data['legal'] if x['templated'])} templated",
        err=True,
    )


@main.command()
@click.option("--point", required=True)
@click.option("--matrix", "matrix_path", type=click.Path(), default=None)
@click.option("--random", "random_spec", metavar="RxC:DENSITY[:SEED]", default=None)
@click.option("--N", "n", default=4, show_default=True)
@click.option("--p", default=256, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write the CUDA source here instead of stdout.")
@click.pass_context
def emit(ctx, point, matrix_path, random_spec, n, p, out):
    """Emit CUDA source for a point's template kernel."""
    payload = {"point": point, "n": n, "p": p}
    if matrix_path is not None or random_spec is not None:
        payload["matrix"] = _matrix_spec(matrix_path, random_spec)
    data = _client(ctx).post("/emit", payload)
    _write_out(data["source"], out)
    click.echo(
        f"# {data['kernel']} ({data['family']}) grid={data['grid_size']} block={data['block_size']}",
        err=True,
    )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)
