import numpy as np
import pytest
from PIL import Image

import helpers
from styleforge import cli, pipeline, vgg
from styleforge.errors import FormatError, PipelineError, ValidationError
from styleforge.pipeline import RunConfig


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Content/style PNGs plus weight files shared by the pipeline tests."""
    d = tmp_path_factory.mktemp("fixtures")
    pipeline.save_image(helpers.smooth_photo(48, 64), d / "content.png")
    pipeline.save_image(helpers.textured_image(48, 64, seed=9), d / "style.png")
    pipeline.save_image(helpers.textured_image(48, 64, seed=10), d / "style2.png")
    pipeline.save_image(helpers.smooth_photo(64, 64, seed=5), d / "content64.png")
    pipeline.save_image(helpers.textured_image(64, 64, seed=6), d / "style64.png")

    rng = np.random.default_rng(21)
    net = vgg.vgg16()
    vgg.write_weights(
        helpers.random_conv_weights(net, rng, scale=0.05).tensors,
        d / "vgg16.sfw",
        source="synthetic-vgg16",
    )
    vgg.write_weights(
        helpers.identity_codec_store().tensors, d / "codec_id.sfw",
        source="synthetic-identity-codec",
    )
    vgg.write_weights(
        helpers.random_codec_store(np.random.default_rng(31)).tensors,
        d / "codec_rand.sfw",
        source="synthetic-random-codec",
    )
    return d


class TestImageIO:
    def test_png_roundtrip_quantization(self, tmp_path, rng):
        img = rng.uniform(0.0, 1.0, (3, 20, 30))
        path = tmp_path / "x.png"
        pipeline.save_image(img, path)
        back = pipeline.load_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_grayscale_promoted(self, tmp_path):
        arr = (np.linspace(0, 255, 64).reshape(8, 8)).astype(np.uint8)
        path = tmp_path / "gray.png"
        Image.fromarray(arr, mode="L").save(path)
        img = pipeline.load_image(path)
        assert img.shape == (3, 8, 8)
        assert np.array_equal(img[0], img[1]) and np.array_equal(img[1], img[2])

    def test_16bit_rejected(self, tmp_path):
        arr = (np.ones((8, 8)) * 1000).astype("<u2")
        path = tmp_path / "deep.png"
        Image.frombytes("I;16", (8, 8), arr.tobytes()).save(path)
        with pytest.raises(FormatError, match="bit depth"):
            pipeline.load_image(path)

    def test_missing_file_errors_with_path(self, tmp_path):
        with pytest.raises(OSError, match="nope.png"):
            pipeline.load_image(tmp_path / "nope.png")

    def test_save_clamps(self, tmp_path):
        img = np.stack([np.full((4, 4), -0.5), np.full((4, 4), 0.5), np.full((4, 4), 1.5)])
        path = tmp_path / "c.png"
        pipeline.save_image(img, path)
        back = pipeline.load_image(path)
        assert back[0].max() == 0.0 and back[2].min() == 1.0


class TestMaskLoading:
    def test_grayscale_mask(self, tmp_path):
        arr = np.zeros((8, 8), dtype=np.uint8)
        arr[:, 4:] = 255
        path = tmp_path / "m.png"
        Image.fromarray(arr, mode="L").save(path)
        ms = pipeline.load_mask(path)
        assert len(ms.regions) == 1
        assert ms.regions[0].max() == 1.0 and ms.regions[0].min() == 0.0

    def test_palette_mask_regions(self, tmp_path):
        arr = np.zeros((8, 8), dtype=np.uint8)
        arr[:, 4:] = 1
        img = Image.fromarray(arr, mode="P")
        img.putpalette([0, 0, 0, 255, 0, 0] + [0] * (254 * 3))
        path = tmp_path / "p.png"
        img.save(path)
        ms = pipeline.load_mask(path, {0: 0, 1: 1})
        assert len(ms.regions) == 2
        assert ms.style_of == (0, 1)
        assert np.array_equal(ms.regions[0] + ms.regions[1], np.ones((8, 8)))


class TestRunConfig:
    def test_validation(self):
        cfg = RunConfig(command="nst", optimizer="sgd")
        with pytest.raises(ValidationError):
            cfg.validate()

    def test_level_list(self):
        assert RunConfig(levels="5, 3,1").level_list() == (5, 3, 1)
        with pytest.raises(ValidationError):
            RunConfig(levels="5,two").level_list()

    def test_config_file_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("alpha = 2.5\nlambda = 0.01\nshift = true\nlevels = 3,2,1\n")
        values = pipeline.parse_config_file(p)
        cfg = pipeline.config_from_mapping(values)
        assert cfg.alpha == 2.5
        assert cfg.lambda_tv == 0.01
        assert cfg.shift is True
        assert cfg.levels == "3,2,1"

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("bogus = 1\n")
        with pytest.raises(FormatError):
            pipeline.parse_config_file(p)


class TestColorMatchPipeline:
    def test_identical_images(self, fixture_dir, tmp_path):
        out = tmp_path / "o.png"
        cfg = RunConfig(command="color-match", content=str(fixture_dir / "content.png"),
                        style=str(fixture_dir / "content.png"), output=str(out))
        pipeline.run_color_match(cfg)
        a = pipeline.load_image(fixture_dir / "content.png")
        b = pipeline.load_image(out)
        assert np.abs(a - b).max() <= 1.5 / 255.0

    def test_stats_match_through_files(self, fixture_dir, tmp_path):
        from styleforge import color_transfer as ct
        out = tmp_path / "o.png"
        cfg = RunConfig(command="color-match", content=str(fixture_dir / "content.png"),
                        style=str(fixture_dir / "style.png"), output=str(out))
        pipeline.run_color_match(cfg)
        got = ct.compute_stats(pipeline.load_image(out))
        want = ct.compute_stats(pipeline.load_image(fixture_dir / "content.png"))
        # 8-bit quantization limits the achievable match
        assert np.abs(got.mean - want.mean).max() < 2.0 / 255.0
        assert np.linalg.norm(got.cov - want.cov) / np.linalg.norm(want.cov) < 0.05

    def test_grayscale_style_succeeds(self, fixture_dir, tmp_path):
        gray = np.repeat(helpers.smooth_photo(16, 16)[:1], 3, axis=0)
        src = tmp_path / "gray.png"
        pipeline.save_image(gray, src)
        out = tmp_path / "o.png"
        cfg = RunConfig(command="color-match", content=str(fixture_dir / "content.png"),
                        style=str(src), output=str(out))
        pipeline.run_color_match(cfg)
        assert out.exists()

    def test_report_written(self, fixture_dir, tmp_path):
        out = tmp_path / "o.png"
        cfg = RunConfig(command="color-match", content=str(fixture_dir / "content.png"),
                        style=str(fixture_dir / "style.png"), output=str(out))
        res = pipeline.run_color_match(cfg)
        text = open(res["report"]).read()
        assert "config.command = color-match" in text
        assert "timing.match_s" in text


def _nst_config(fixture_dir, out, **kw):
    base = dict(
        command="nst",
        content=str(fixture_dir / "content.png"),
        style=str(fixture_dir / "style.png"),
        weights=str(fixture_dir / "vgg16.sfw"),
        output=str(out),
        iters=20,
        lr=2.0,
        seed=4,
        alpha=1.0,
        beta=1e3,
    )
    base.update(kw)
    return RunConfig(**base)


class TestRunNst:
    def test_loss_decreases_and_report(self, fixture_dir, tmp_path):
        out = tmp_path / "nst.png"
        trace_path = tmp_path / "trace.csv"
        cfg = _nst_config(fixture_dir, out, iters=30, trace=str(trace_path))
        res = pipeline.run_nst(cfg)
        assert out.exists()
        assert res["final_loss"] < res["initial_loss"]
        lines = trace_path.read_text().strip().splitlines()
        assert lines[0] == "iteration,total,content,style,tv"
        assert len(lines) >= cfg.iters

    def test_deterministic_under_seed(self, fixture_dir, tmp_path):
        out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
        pipeline.run_nst(_nst_config(fixture_dir, out1, iters=8))
        pipeline.run_nst(_nst_config(fixture_dir, out2, iters=8))
        assert out1.read_bytes() == out2.read_bytes()

    def test_zero_mask_equals_content_only(self, fixture_dir, tmp_path):
        mask_path = tmp_path / "zeros.png"
        Image.fromarray(np.zeros((48, 64), dtype=np.uint8), mode="L").save(mask_path)
        out_m = tmp_path / "masked.png"
        out_c = tmp_path / "content_only.png"
        pipeline.run_nst(_nst_config(fixture_dir, out_m, iters=8, mask=str(mask_path)))
        pipeline.run_nst(_nst_config(fixture_dir, out_c, iters=8, beta=0.0))
        assert out_m.read_bytes() == out_c.read_bytes()

    def test_lbfgs_path(self, fixture_dir, tmp_path):
        out = tmp_path / "nst_lbfgs.png"
        cfg = _nst_config(fixture_dir, out, optimizer="lbfgs", iters=10, init="content")
        res = pipeline.run_nst(cfg)
        assert res["final_loss"] <= res["initial_loss"]

    def test_color_pre_and_improvements(self, fixture_dir, tmp_path):
        out = tmp_path / "nst_improved.png"
        cfg = _nst_config(fixture_dir, out, iters=8, shift=True, chained=True, color="pre")
        pipeline.run_nst(cfg)
        assert out.exists()

    def test_nary_mask_two_styles(self, fixture_dir, tmp_path):
        arr = np.zeros((48, 64), dtype=np.uint8)
        arr[:, 32:] = 1
        img = Image.fromarray(arr, mode="P")
        img.putpalette([0, 0, 0, 255, 255, 255] + [0] * (254 * 3))
        mask_path = tmp_path / "regions.png"
        img.save(mask_path)
        out = tmp_path / "nary.png"
        cfg = _nst_config(
            fixture_dir, out, iters=8,
            style2=str(fixture_dir / "style2.png"),
            mask=str(mask_path), region_styles="0:0,1:1",
        )
        pipeline.run_nst(cfg)
        assert out.exists()

    def test_full_default_run_halves_loss(self, fixture_dir, tmp_path):
        # 64x64 fixtures, 300 Adam iterations, default objective weights
        out = tmp_path / "nst_full.png"
        cfg = RunConfig(
            command="nst",
            content=str(fixture_dir / "content64.png"),
            style=str(fixture_dir / "style64.png"),
            weights=str(fixture_dir / "vgg16.sfw"),
            output=str(out),
            iters=300,
            seed=1,
        )
        res = pipeline.run_nst(cfg)
        assert res["final_loss"] < 0.5 * res["initial_loss"]

    def test_missing_weights_stage_tagged(self, fixture_dir, tmp_path):
        cfg = _nst_config(fixture_dir, tmp_path / "x.png", weights=str(tmp_path / "no.sfw"))
        with pytest.raises(PipelineError, match=r"\[load\]"):
            pipeline.run_nst(cfg)


class TestRunUst:
    def test_alpha_zero_reconstructs(self, fixture_dir, tmp_path):
        out = tmp_path / "ust0.png"
        cfg = RunConfig(
            command="ust", content=str(fixture_dir / "content64.png"),
            style=str(fixture_dir / "style64.png"),
            weights=str(fixture_dir / "codec_id.sfw"),
            output=str(out), ust_alpha=0.0,
        )
        pipeline.run_ust(cfg)
        rec = pipeline.load_image(out)
        orig = pipeline.load_image(fixture_dir / "content64.png")
        assert helpers.psnr(rec, orig) > 15.0

    def test_alpha_changes_output(self, fixture_dir, tmp_path):
        outs = []
        for a in (1.0, 0.5):
            out = tmp_path / f"ust_{a}.png"
            cfg = RunConfig(
                command="ust", content=str(fixture_dir / "content64.png"),
                style=str(fixture_dir / "style64.png"),
                weights=str(fixture_dir / "codec_rand.sfw"),
                output=str(out), ust_alpha=a, levels="3,2,1",
            )
            pipeline.run_ust(cfg)
            outs.append(pipeline.load_image(out))
        assert float(np.sum((outs[0] - outs[1]) ** 2)) > 0.0

    def test_output_preserves_content_dims(self, fixture_dir, tmp_path):
        out = tmp_path / "ust_dims.png"
        cfg = RunConfig(
            command="ust", content=str(fixture_dir / "content.png"),  # 48x64
            style=str(fixture_dir / "style64.png"),
            weights=str(fixture_dir / "codec_rand.sfw"),
            output=str(out), ust_alpha=0.8,
        )
        pipeline.run_ust(cfg)
        assert pipeline.load_image(out).shape == (3, 48, 64)

    def test_mask_post_composites_content(self, fixture_dir, tmp_path):
        mask_path = tmp_path / "m.png"
        arr = np.zeros((64, 64), dtype=np.uint8)
        arr[:, 32:] = 255
        Image.fromarray(arr, mode="L").save(mask_path)
        out = tmp_path / "ust_masked.png"
        cfg = RunConfig(
            command="ust", content=str(fixture_dir / "content64.png"),
            style=str(fixture_dir / "style64.png"),
            weights=str(fixture_dir / "codec_rand.sfw"),
            output=str(out), ust_alpha=1.0, levels="2,1", mask=str(mask_path),
        )
        pipeline.run_ust(cfg)
        got = pipeline.load_image(out)
        orig = pipeline.load_image(fixture_dir / "content64.png")
        # left half is pure content, right half is stylized
        assert np.abs(got[:, :, :32] - orig[:, :, :32]).max() <= 1.0 / 255.0 + 1e-12
        assert float(np.sum((got[:, :, 32:] - orig[:, :, 32:]) ** 2)) > 0.0

    def test_256px_run_under_time_budget(self, fixture_dir, tmp_path):
        import time

        pipeline.save_image(helpers.smooth_photo(256, 256, seed=12), tmp_path / "c256.png")
        pipeline.save_image(helpers.textured_image(256, 256, seed=13), tmp_path / "s256.png")
        out = tmp_path / "ust256.png"
        cfg = RunConfig(
            command="ust", content=str(tmp_path / "c256.png"),
            style=str(tmp_path / "s256.png"),
            weights=str(fixture_dir / "codec_rand.sfw"),
            output=str(out), ust_alpha=0.8,
        )
        t0 = time.perf_counter()
        pipeline.run_ust(cfg)
        elapsed = time.perf_counter() - t0
        assert pipeline.load_image(out).shape == (3, 256, 256)
        assert elapsed < 60.0, f"256x256 UST took {elapsed:.1f}s (budget 60s)"

    def test_color_post_and_upscale_blur(self, fixture_dir, tmp_path):
        out = tmp_path / "ust_post.png"
        cfg = RunConfig(
            command="ust", content=str(fixture_dir / "content64.png"),
            style=str(fixture_dir / "style64.png"),
            weights=str(fixture_dir / "codec_rand.sfw"),
            output=str(out), ust_alpha=1.0, levels="2,1",
            color="post", upscale=4, blur_sigma=1.0,
        )
        pipeline.run_ust(cfg)
        assert pipeline.load_image(out).shape == (3, 256, 256)


def test_weightstore_shared_across_threads(fixture_dir):
    """Concurrent forward passes over one store give identical results."""
    from concurrent.futures import ThreadPoolExecutor

    store = vgg.load_weights(fixture_dir / "vgg16.sfw")
    net = vgg.vgg16()
    x = np.random.default_rng(0).standard_normal((3, 32, 32))

    def run(_):
        fm = vgg.forward_collect(net, store, x, {"relu3_1"}, want_tape=False)
        return fm.activations["relu3_1"]

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(run, range(4)))
    for r in results[1:]:
        assert np.array_equal(r, results[0])


def test_console_script_subprocess(fixture_dir, tmp_path):
    import subprocess
    import sys

    out = tmp_path / "sub.png"
    proc = subprocess.run(
        [sys.executable, "-m", "styleforge.cli", "color-match",
         "--content", str(fixture_dir / "content.png"),
         "--style", str(fixture_dir / "style.png"),
         "--output", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


class TestCli:
    def test_color_match_subcommand(self, fixture_dir, tmp_path, capsys):
        out = tmp_path / "cm.png"
        rc = cli.main([
            "color-match",
            "--content", str(fixture_dir / "content.png"),
            "--style", str(fixture_dir / "style.png"),
            "--output", str(out),
        ])
        assert rc == 0 and out.exists()

    def test_nst_with_config_file(self, fixture_dir, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text(
            f"content = {fixture_dir / 'content.png'}\n"
            f"style = {fixture_dir / 'style.png'}\n"
            f"weights = {fixture_dir / 'vgg16.sfw'}\n"
            "iters = 60\nseed = 2\n"
        )
        out = tmp_path / "cli_nst.png"
        rc = cli.main(["nst", "--config", str(cfg_file), "--output", str(out),
                       "--iters", "6"])  # flag overrides the file
        assert rc == 0 and out.exists()
        report = (tmp_path / "cli_nst.png.report.txt").read_text()
        assert "config.iters = 6" in report

    def test_ust_subcommand_prints_timing(self, fixture_dir, tmp_path, capsys):
        out = tmp_path / "cli_ust.png"
        rc = cli.main([
            "ust",
            "--content", str(fixture_dir / "content64.png"),
            "--style", str(fixture_dir / "style64.png"),
            "--weights", str(fixture_dir / "codec_rand.sfw"),
            "--output", str(out), "--levels", "2,1", "--ust-alpha", "0.7",
        ])
        assert rc == 0
        assert "stylized" in capsys.readouterr().out

    def test_error_exit_code_and_stderr(self, fixture_dir, tmp_path, capsys):
        rc = cli.main([
            "nst",
            "--content", str(fixture_dir / "content.png"),
            "--style", str(fixture_dir / "style.png"),
            "--weights", str(tmp_path / "missing.sfw"),
            "--output", str(tmp_path / "x.png"),
        ])
        assert rc == 1
        assert "[load]" in capsys.readouterr().err
