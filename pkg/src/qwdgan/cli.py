"""Command-line client for the denoising service.

Every subcommand builds a request model and posts it to the service API;
by default an in-process app instance handles it, and ``--server`` points
the same commands at a remote instance instead. Exit codes: 0 success,
1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import sys

import click

from .errors import QwdganError

_KIND_EXIT = {"usage": 1, "data": 2, "numeric": 3}


class ServiceClient:
    """Minimal POST client: in-process TestClient or remote httpx."""

    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        body = response.json()
        if response.status_code == 200:
            return body
        detail = body.get("detail")
        if isinstance(detail, dict) and "error_kind" in detail:
            kind = detail["error_kind"]
            message = detail.get("message", "request failed")
        else:
            kind, message = "usage", str(detail)
        click.echo(f"error ({kind}): {message}", err=True)
        sys.exit(_KIND_EXIT.get(kind, 1))

    def get(self, path: str) -> dict:
        response = self._client.get(path)
        return response.json()


def _overrides(pairs: tuple[str, ...]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.UsageError(f"--set expects section.key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        out[key.strip()] = value.strip()
    return out


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL (default: run in-process).")
@click.pass_context
def cli(ctx, server):
    """Wavelet-guided adversarial denoising toolkit."""
    ctx.obj = {"server": server}


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj["server"])


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=str,
              help="Dataset manifest file.")
@click.option("--out", "output_dir", required=True, type=str)
@click.option("--bit-depth", default=16, show_default=True)
@click.option("--no-clean", is_flag=True, help="Skip writing clean reference images.")
@click.pass_context
def simulate(ctx, manifest_path, output_dir, bit_depth, no_clean):
    """Render manifest entries to noisy (and clean) PNGs."""
    body = _client(ctx).post("/simulate", {
        "manifest_path": manifest_path, "output_dir": output_dir,
        "bit_depth": bit_depth, "write_clean": not no_clean})
    click.echo(f"wrote {len(body['written'])} files; "
               f"derived manifest: {body['manifest_path']}")


@cli.command()
@click.option("--config", "config_path", default=None, type=str,
              help="INI config file; omitted = defaults.")
@click.option("--set", "sets", multiple=True, metavar="SECTION.KEY=VALUE",
              help="Override a config value (repeatable).")
@click.option("--manifest", "manifest_path", default=None, type=str,
              help="Training manifest; omitted = built-in phantom set.")
@click.option("--checkpoint-out", required=True, type=str)
@click.option("--log-csv", default=None, type=str)
@click.option("--resume-from", default=None, type=str)
@click.pass_context
def train(ctx, config_path, sets, manifest_path, checkpoint_out, log_csv, resume_from):
    """Train the adversarial denoiser and write a checkpoint."""
    body = _client(ctx).post("/train", {
        "config_path": config_path, "overrides": _overrides(sets),
        "manifest_path": manifest_path, "checkpoint_out": checkpoint_out,
        "log_csv": log_csv, "resume_from": resume_from})
    click.echo(f"trained {body['steps']} steps; g_loss={body['final_g_loss']:.4f} "
               f"d_loss={body['final_d_loss']:.4f}")
    click.echo(f"checkpoint: {body['checkpoint_path']}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--input-dir", required=True, type=str)
@click.option("--out", "output_dir", required=True, type=str)
@click.option("--bit-depth", default=16, show_default=True)
@click.pass_context
def denoise(ctx, checkpoint_path, input_dir, output_dir, bit_depth):
    """Denoise every PNG in a directory with a trained checkpoint."""
    body = _client(ctx).post("/denoise", {
        "checkpoint_path": checkpoint_path, "input_dir": input_dir,
        "output_dir": output_dir, "bit_depth": bit_depth})
    click.echo(f"wrote {len(body['written'])} denoised images")


@cli.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=str)
@click.option("--manifest", "manifest_path", required=True, type=str)
@click.option("--out", "output_dir", required=True, type=str)
@click.option("--split", default="eval", show_default=True)
@click.option("--hfrr-cutoff", default=0.25, show_default=True)
@click.option("--wavelet-levels", default=2, show_default=True)
@click.option("--spectra", is_flag=True, help="Emit radial-spectrum CSVs.")
@click.option("--svg", is_flag=True, help="Emit SVG spectrum plots.")
@click.pass_context
def eval_cmd(ctx, checkpoint_path, manifest_path, output_dir, split,
             hfrr_cutoff, wavelet_levels, spectra, svg):
    """Evaluate a checkpoint against a manifest split."""
    body = _client(ctx).post("/eval", {
        "checkpoint_path": checkpoint_path, "manifest_path": manifest_path,
        "output_dir": output_dir, "split": split, "hfrr_cutoff": hfrr_cutoff,
        "wavelet_levels": wavelet_levels, "spectra": spectra, "svg": svg})
    click.echo(f"evaluated {body['images']} images -> {body['metrics_csv']}")
    header = f"{'method':10s} {'psnr_db':>9s} {'ssim':>7s} {'hfrr':>7s} {'wavelet_mae':>12s}"
    click.echo(header)
    for row in body["aggregates"]:
        click.echo(f"{row['method']:10s} {row['psnr_db']:9.3f} {row['ssim']:7.4f} "
                   f"{row['hfrr']:7.4f} {row['wavelet_mae']:12.6f}")


@cli.command()
@click.argument("images", nargs=-1, required=True)
@click.option("--out", "output_dir", required=True, type=str)
@click.option("--bins", default=16, show_default=True)
@click.option("--svg", is_flag=True)
@click.pass_context
def spectrum(ctx, images, output_dir, bins, svg):
    """Radially averaged power spectra of one or more PNGs."""
    body = _client(ctx).post("/spectrum", {
        "images": list(images), "output_dir": output_dir,
        "n_bins": bins, "svg": svg})
    for path in body["csv_paths"]:
        click.echo(path)
    if body["svg_path"]:
        click.echo(body["svg_path"])


@cli.command()
@click.option("--config", "config_path", default=None, type=str)
@click.option("--set", "sets", multiple=True, metavar="SECTION.KEY=VALUE")
@click.option("--manifest", "manifest_path", default=None, type=str)
@click.option("--variants", default=None, type=str,
              help="Comma-separated variant names (default: all).")
@click.option("--out-csv", "output_csv", required=True, type=str)
@click.pass_context
def ablate(ctx, config_path, sets, manifest_path, variants, output_csv):
    """Train and compare ablation variants under identical settings."""
    body = _client(ctx).post("/ablate", {
        "config_path": config_path, "overrides": _overrides(sets),
        "manifest_path": manifest_path,
        "variants": [v.strip() for v in variants.split(",")] if variants else [],
        "output_csv": output_csv})
    click.echo(f"comparison table: {body['output_csv']}")
    for row in body["rows"]:
        click.echo(f"{row['variant']:24s} psnr={row['psnr_db']:.3f} "
                   f"ssim={row['ssim']:.4f} wavelet_mae={row['wavelet_mae']:.6f}")


@cli.command()
@click.option("--train", "n_train", default=32, show_default=True)
@click.option("--eval", "n_eval", default=8, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--sigma", default=0.1, show_default=True)
@click.option("--frames", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=str)
def manifest(n_train, n_eval, size, sigma, frames, seed, out_path):
    """Write a synthetic-phantom dataset manifest."""
    from .data import NoiseModel, phantom_manifest
    from .ioutil import atomic_write_text

    man = phantom_manifest(n_train, n_eval, size,
                           NoiseModel(kind="gaussian", sigma=sigma, seed=seed),
                           frames=frames, seed=seed)
    atomic_write_text(out_path, man.to_text())
    click.echo(f"wrote {len(man.records)} records to {out_path}")


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except QwdganError as exc:
        click.echo(f"error ({exc.kind}): {exc}", err=True)
        return exc.exit_code
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
