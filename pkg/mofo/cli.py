"""Command-line entry point: reproducible pipeline runs with a run manifest beside every output."""
import logging
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional

import click
from pydantic import ValidationError

from . import __version__
from .artifacts import (CheckpointCodec, FloCodec, load_json, read_frames, write_csv, write_float_dump,
                        write_json, write_map_pgm)
from .boxdetect import MotionBox, detect_clip
from .config import (DetectConfig, FlowConfig, MaskConfig, NetConfig, OptimizerConfig, RunConfig, SmoothConfig,
                     SweepConfig, log_level, output_dir)
from .errors import MofoError, RejectedInputError, StageError
from .evalsynth import (SceneSpec, clip_boxes, detection_suite, direction_suite, eval_detection, gen_clip,
                        micro_suite, sweep_inside_ratio)
from .flow import clip_flows
from .masker import audit_plan, motion_plan
from .motionmap import smoothed_motion_map
from .seeding import derive_seed
from .tinynet import build_net, load_net_tensors, net_tensors
from .train import train_finetune, train_pretrain

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_FAILURE = 2
MANIFEST_NAME = 'run_manifest.json'


class CommaList(click.ParamType):
    """Comma-separated numbers, e.g. '8,16,16'."""

    name = 'list'

    def __init__(self, item_type=float, length: Optional[int] = None):
        self.item_type = item_type
        self.length = length

    def convert(self, value, param, ctx):
        if isinstance(value, (tuple, list)):
            items = list(value)
        else:
            items = [s.strip() for s in str(value).split(',') if s.strip()]
        try:
            items = [self.item_type(x) for x in items]
        except (TypeError, ValueError):
            self.fail(f"{value!r} is not a comma-separated list of {self.item_type.__name__}", param, ctx)
        if self.length is not None and len(items) != self.length:
            self.fail(f"expected {self.length} values, got {len(items)}", param, ctx)
        if not items:
            self.fail("expected at least one value", param, ctx)
        return tuple(items)


def _joined(values) -> str:
    return ','.join(str(v) for v in values)


def _default(model, name):
    value = model.model_fields[name].default
    return _joined(value) if isinstance(value, (tuple, list)) else value


class MofoGroup(click.Group):
    """Usage errors exit with 1, pipeline failures with 2."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        except MofoError as e:
            click.echo(f"Error: {e}", err=True)
            sys.exit(EXIT_FAILURE)
        sys.exit(rv if isinstance(rv, int) else 0)


@contextmanager
def _stage(name: str):
    """Wrap any failure inside a pipeline stage into a StageError naming it."""
    try:
        yield
    except (click.ClickException, click.exceptions.Exit, click.Abort, StageError):
        raise
    except Exception as e:
        logger.debug("stage %s failed", name, exc_info=True)
        raise StageError(name, e) from e


def _config(model, params: Dict, **overrides):
    """Build a config from the CLI params whose names match its fields; invalid values are usage errors."""
    fields = {k: params[k] for k in model.model_fields if k in params}
    fields.update(overrides)
    try:
        return model(**fields)
    except ValidationError as e:
        raise click.UsageError(f"invalid {model.__name__}: {e}") from e


def _jsonable(value):
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


class Run:
    """Tracks one invocation: its output directory, the files it writes and the manifest that replays it."""

    def __init__(self, ctx: click.Context, out: Optional[str]):
        self.subcommand = ctx.command.name
        self.params = dict(ctx.params)
        self.out = Path(out) if out else output_dir() / self.subcommand
        self.params['out'] = str(self.out)
        self.seed = int(self.params.get('seed', 0))
        self.outputs: Dict[str, str] = {}
        self.configs: Dict[str, Dict] = {}
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.outputs[name] = name
        return self.out / name

    def record(self, **configs):
        for key, cfg in configs.items():
            self.configs[key] = cfg.model_dump() if hasattr(cfg, 'model_dump') else cfg

    def finish(self):
        manifest = RunConfig(
            subcommand=self.subcommand,
            seed=self.seed,
            inputs={k: _jsonable(v) for k, v in self.params.items() if k in ('frames', 'manifest', 'init') and v},
            outputs=self.outputs,
            params={k: _jsonable(v) for k, v in self.params.items()},
            configs=self.configs,
            version=__version__,
        )
        write_json(manifest.model_dump(), self.out / MANIFEST_NAME)
        logger.info("%s: wrote %d files to %s", self.subcommand, len(self.outputs), self.out)
        click.echo(str(self.out))


def _options(*decorators):
    def apply(fn):
        for decorator in reversed(decorators):
            fn = decorator(fn)
        return fn
    return apply


run_options = _options(
    click.option('--seed', type=int, default=0, show_default=True,
                 help='Global seed; every stage derives a named sub-seed from it.'),
    click.option('--out', type=click.Path(file_okay=False), default=None,
                 help='Output directory (default: $MOFO_OUTPUT_DIR/<subcommand>).'),
)

frames_option = click.option('--frames', type=click.Path(exists=True, file_okay=False), required=True,
                             help='Directory of frame_%05d.pgm / .ppm files.')

flow_options = _options(
    click.option('--levels', 'pyramid_levels', type=int, default=_default(FlowConfig, 'pyramid_levels'),
                 show_default=True, help='Pyramid levels.'),
    click.option('--pyramid-scale', type=float, default=_default(FlowConfig, 'pyramid_scale'), show_default=True),
    click.option('--warps', 'warps_per_level', type=int, default=_default(FlowConfig, 'warps_per_level'),
                 show_default=True),
    click.option('--iterations', 'inner_iterations', type=int, default=_default(FlowConfig, 'inner_iterations'),
                 show_default=True),
    click.option('--lambda', 'lambda_data', type=float, default=_default(FlowConfig, 'lambda_data'),
                 show_default=True, help='Data term weight.'),
    click.option('--theta', type=float, default=_default(FlowConfig, 'theta'), show_default=True),
    click.option('--tau', type=float, default=_default(FlowConfig, 'tau'), show_default=True),
    click.option('--epsilon', 'stop_epsilon', type=float, default=_default(FlowConfig, 'stop_epsilon'),
                 show_default=True),
    click.option('--min-level-size', type=int, default=_default(FlowConfig, 'min_level_size'), show_default=True),
    click.option('--median/--no-median', 'median_filter', default=_default(FlowConfig, 'median_filter'),
                 show_default=True, help='3x3 median filter after each warp.'),
)

smooth_options = _options(
    click.option('--sigma', type=float, default=_default(SmoothConfig, 'sigma'), show_default=True,
                 help='Gaussian smoothing of the motion map.'),
    click.option('--kernel-radius', type=int, default=_default(SmoothConfig, 'kernel_radius'), show_default=True),
)

detect_options = _options(
    click.option('--top-k', type=int, default=_default(DetectConfig, 'top_k'), show_default=True,
                 help='Contours kept per frame pair.'),
    click.option('--min-area', 'min_area_fraction', type=float, default=_default(DetectConfig, 'min_area_fraction'),
                 show_default=True, help='Minimum contour area as a fraction of the frame.'),
    click.option('--border-margin', type=int, default=None,
                 help='Motion-map border band ignored before thresholding; 0 disables. [default: from flow]'),
)

mask_ratio_options = _options(
    click.option('--mask-ratio', 'overall_ratio', type=float, default=_default(MaskConfig, 'overall_ratio'),
                 show_default=True, help='Overall masking ratio.'),
    click.option('--inside-ratio', type=float, default=_default(MaskConfig, 'inside_ratio'), show_default=True,
                 help='Minimum masked fraction of the motion box.'),
    click.option('--mode', type=click.Choice(['motion', 'tube', 'patch']), default=_default(MaskConfig, 'mode'),
                 show_default=True),
    click.option('--inside-test', type=click.Choice(['center', 'any_overlap', 'half_overlap']),
                 default=_default(MaskConfig, 'inside_test'), show_default=True),
)

net_options = _options(
    click.option('--clip-dims', type=CommaList(int, 4), default=_default(NetConfig, 'clip_dims'), show_default=True,
                 help='T,H,W,C'),
    click.option('--tube-dims', type=CommaList(int, 3), default=_default(NetConfig, 'tube_dims'), show_default=True,
                 help='Tube size T,H,W'),
    click.option('--d-model', type=int, default=_default(NetConfig, 'd_model'), show_default=True),
    click.option('--depth-enc', type=int, default=_default(NetConfig, 'depth_enc'), show_default=True),
    click.option('--depth-dec', type=int, default=_default(NetConfig, 'depth_dec'), show_default=True),
    click.option('--heads', type=int, default=_default(NetConfig, 'heads'), show_default=True),
    click.option('--mlp-ratio', type=int, default=_default(NetConfig, 'mlp_ratio'), show_default=True),
    click.option('--mca-heads', type=int, default=_default(NetConfig, 'mca_heads'), show_default=True),
    click.option('--mca-depth', type=int, default=_default(NetConfig, 'mca_depth'), show_default=True),
    click.option('--num-classes', type=int, default=_default(NetConfig, 'num_classes'), show_default=True),
    click.option('--head', type=click.Choice(['mca', 'linear']), default=_default(NetConfig, 'head'),
                 show_default=True, help='Finetuning head.'),
    click.option('--lr', type=float, default=_default(OptimizerConfig, 'lr'), show_default=True),
)

box_source_option = click.option('--box-source', type=click.Choice(['gt', 'detected']),
                                 default=_default(SweepConfig, 'box_source'), show_default=True,
                                 help='Motion box per clip: rendered sprite sweep or the detection pipeline.')


def _load_suite(path: str) -> List[SceneSpec]:
    payload = load_json(path)
    scenes = payload.get('scenes') if isinstance(payload, dict) else payload
    if not isinstance(scenes, list) or not scenes:
        raise click.UsageError(f"manifest {path} contains no scenes")
    try:
        return [SceneSpec(**scene) for scene in scenes]
    except (TypeError, ValidationError) as e:
        raise click.UsageError(f"invalid scene in {path}: {e}") from e


def _render(specs: List[SceneSpec], seed: int, net_cfg: NetConfig, tag: str):
    clips = [gen_clip(spec, derive_seed(seed, f'{tag}{i}')) for i, spec in enumerate(specs)]
    for i, clip in enumerate(clips):
        if clip.volume().shape != tuple(net_cfg.clip_dims):
            raise RejectedInputError(f"scene {i} renders {clip.volume().shape}, network expects {net_cfg.clip_dims}")
    return clips


@click.group(cls=MofoGroup)
@click.version_option(__version__, prog_name='mofo')
@click.option('--log-level', 'level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              default=None, help='Logging level (default: $MOFO_LOG_LEVEL or INFO).')
def main(level: Optional[str]):
    """Motion-focused self-supervision pipeline: flow, motion boxes, masking and a reference MAE."""
    logging.basicConfig(level=(level or log_level()).upper(),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


@main.command()
@run_options
@frames_option
@flow_options
@click.pass_context
def flow(ctx, **params):
    """Estimate TV-L1 flow for every consecutive frame pair."""
    run = Run(ctx, params['out'])
    cfg = _config(FlowConfig, params)
    with _stage('read_frames'):
        frames = read_frames(params['frames'])
    with _stage('flow'):
        fields = clip_flows(frames, cfg)
    with _stage('write'):
        codec = FloCodec()
        for i, field in enumerate(fields):
            codec.save(field, run.path(f'flow_{i:05d}.flo'))
    run.record(flow=cfg)
    run.finish()


@main.command()
@run_options
@frames_option
@flow_options
@smooth_options
@click.pass_context
def motionmap(ctx, **params):
    """Write smoothed motion maps as PGM previews and float32 dumps."""
    run = Run(ctx, params['out'])
    flow_cfg, smooth_cfg = _config(FlowConfig, params), _config(SmoothConfig, params)
    with _stage('read_frames'):
        frames = read_frames(params['frames'])
    with _stage('flow'):
        fields = clip_flows(frames, flow_cfg)
    with _stage('motionmap'):
        maps = [smoothed_motion_map(field, smooth_cfg) for field in fields]
    with _stage('write'):
        for i, motion in enumerate(maps):
            write_map_pgm(motion, run.path(f'motion_{i:05d}.pgm'))
            write_float_dump(motion, run.path(f'motion_{i:05d}.f32'))
    run.record(flow=flow_cfg, smooth=smooth_cfg)
    run.finish()


@main.command()
@run_options
@frames_option
@flow_options
@smooth_options
@detect_options
@click.option('--per-frame', is_flag=True, help='Also report the box of every frame pair.')
@click.pass_context
def box(ctx, **params):
    """Detect the motion box of a clip."""
    run = Run(ctx, params['out'])
    flow_cfg, smooth_cfg = _config(FlowConfig, params), _config(SmoothConfig, params)
    detect_cfg = _config(DetectConfig, params)
    with _stage('read_frames'):
        frames = read_frames(params['frames'])
    with _stage('boxdetect'):
        detection = detect_clip(frames, flow_cfg, smooth_cfg, detect_cfg)
    if detect_cfg.per_frame:
        payload = detection.to_dict()
    else:
        payload = {'clip': detection.box.to_dict(), 'fallback': all(detection.fallback)}
    write_json(payload, run.path('boxes.json'))
    run.record(flow=flow_cfg, smooth=smooth_cfg, detect=detect_cfg)
    run.finish()


@main.command()
@run_options
@click.option('--frames', type=click.Path(exists=True, file_okay=False), default=None,
              help='Clip to detect the box on; alternative to --clip-dims/--box.')
@click.option('--clip-dims', type=CommaList(int, 3), default=None, help='T,H,W when no frames are given.')
@click.option('--box', 'box_coords', type=CommaList(int, 4), default=None, help='x0,y0,x1,y1 motion box.')
@click.option('--tube', 'tube_dims', type=CommaList(int, 3), default=_default(MaskConfig, 'tube_dims'),
              show_default=True, help='Tube size T,H,W')
@mask_ratio_options
@flow_options
@smooth_options
@detect_options
@click.pass_context
def mask(ctx, **params):
    """Sample a motion-constrained mask plan and audit its counts."""
    if params['frames'] is None and params['clip_dims'] is None:
        raise click.UsageError("either --frames or --clip-dims is required")
    motion_box = None
    if params['box_coords'] is not None:
        try:
            motion_box = MotionBox(*params['box_coords'])
        except RejectedInputError as e:
            raise click.BadParameter(str(e), param_hint='--box') from e
    run = Run(ctx, params['out'])
    mask_cfg = _config(MaskConfig, params)
    if params['frames'] is not None:
        flow_cfg, smooth_cfg = _config(FlowConfig, params), _config(SmoothConfig, params)
        detect_cfg = _config(DetectConfig, params)
        with _stage('read_frames'):
            frames = read_frames(params['frames'])
            if not frames:
                raise RejectedInputError(f"no frame_%05d.pgm/.ppm files in {params['frames']}")
        clip_dims = (len(frames), frames[0].height, frames[0].width)
        if motion_box is None:
            with _stage('boxdetect'):
                motion_box = detect_clip(frames, flow_cfg, smooth_cfg, detect_cfg).box
        run.record(flow=flow_cfg, smooth=smooth_cfg, detect=detect_cfg)
    else:
        clip_dims = params['clip_dims']
    with _stage('mask'):
        grid, plan = motion_plan(clip_dims, mask_cfg.tube_dims, motion_box, mask_cfg.overall_ratio,
                                 mask_cfg.inside_ratio, derive_seed(run.seed, 'mask'), mask_cfg.mode,
                                 mask_cfg.inside_test)
        payload = plan.to_dict(grid)
        payload['box'] = (motion_box or MotionBox.full(clip_dims[2], clip_dims[1])).to_dict()
        payload['audit'] = audit_plan(grid, plan)
    write_json(payload, run.path('mask.json'))
    run.record(mask=mask_cfg, clip_dims=list(clip_dims))
    run.finish()


def _save_net(run: Run, net, net_cfg: NetConfig):
    CheckpointCodec().save(net_tensors(net), run.path('checkpoint.mofo'))
    write_json(net_cfg.model_dump(), run.path('net.json'))


@main.command()
@run_options
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), required=True,
              help='JSON list of scene specs.')
@net_options
@click.option('--steps', type=int, default=_default(OptimizerConfig, 'steps'), show_default=True)
@mask_ratio_options
@box_source_option
@click.pass_context
def pretrain(ctx, **params):
    """Pretrain the reference MAE on a scene suite with motion-constrained masking."""
    run = Run(ctx, params['out'])
    net_cfg = _config(NetConfig, params)
    opt_cfg = _config(OptimizerConfig, params, seed=derive_seed(run.seed, 'pretrain'))
    mask_cfg = _config(MaskConfig, params, tube_dims=net_cfg.tube_dims)
    specs = _load_suite(params['manifest'])
    T, H, W, _ = net_cfg.clip_dims
    with _stage('render'):
        clips = _render(specs, run.seed, net_cfg, 'clip')
    with _stage('boxdetect'):
        boxes = clip_boxes(clips, params['box_source'], None, None, None)
    with _stage('mask'):
        plans = [motion_plan((T, H, W), net_cfg.tube_dims, b, mask_cfg.overall_ratio, mask_cfg.inside_ratio,
                             derive_seed(run.seed, f'mask{i}'), mask_cfg.mode, mask_cfg.inside_test)[1]
                 for i, b in enumerate(boxes)]
    with _stage('pretrain'):
        result = train_pretrain([c.volume() for c in clips], plans, opt_cfg=opt_cfg, net_cfg=net_cfg)
    with _stage('write'):
        _save_net(run, result.net, net_cfg)
        write_csv(['step', 'loss'], enumerate(result.losses), run.path('trace.csv'))
    run.record(net=net_cfg, optimizer=opt_cfg, mask=mask_cfg, flow=FlowConfig(), smooth=SmoothConfig(),
               detect=DetectConfig())
    run.finish()


@main.command()
@run_options
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), required=True,
              help='JSON list of labelled scene specs.')
@click.option('--init', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Checkpoint whose matching tensors initialize the network.')
@net_options
@click.option('--steps', type=int, default=300, show_default=True)
@click.option('--inside-test', type=click.Choice(['center', 'any_overlap', 'half_overlap']),
              default='center', show_default=True)
@box_source_option
@click.pass_context
def finetune(ctx, **params):
    """Finetune encoder and head on a labelled scene suite."""
    run = Run(ctx, params['out'])
    net_cfg = _config(NetConfig, params)
    opt_cfg = _config(OptimizerConfig, params, seed=derive_seed(run.seed, 'finetune'))
    specs = _load_suite(params['manifest'])
    with _stage('render'):
        clips = _render(specs, run.seed, net_cfg, 'clip')
    net = None
    if params['init']:
        with _stage('load_checkpoint'):
            net = build_net(net_cfg, seed=opt_cfg.seed)
            load_net_tensors(net, CheckpointCodec().load(params['init']), strict=False)
    with _stage('boxdetect'):
        boxes = clip_boxes(clips, params['box_source'], None, None, None)
    with _stage('finetune'):
        result = train_finetune([c.volume() for c in clips], boxes, [c.label for c in clips], net=net,
                                opt_cfg=opt_cfg, net_cfg=net_cfg, inside_test=params['inside_test'])
    with _stage('write'):
        _save_net(run, result.net, net_cfg)
        write_csv(['step', 'loss', 'accuracy'],
                  ((i, loss, acc) for i, (loss, acc) in enumerate(zip(result.losses, result.accuracies))),
                  run.path('trace.csv'))
    run.record(net=net_cfg, optimizer=opt_cfg)
    run.finish()


@main.command(name='eval')
@run_options
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), required=True,
              help='JSON list of scene specs.')
@flow_options
@smooth_options
@detect_options
@click.option('--tube', 'tube_dims', type=CommaList(int, 3), default=_default(MaskConfig, 'tube_dims'),
              show_default=True, help='Tube size T,H,W for the masking audit.')
@mask_ratio_options
@click.pass_context
def eval_(ctx, **params):
    """Score automatic motion boxes against rendered ground truth and audit the resulting masks."""
    specs = _load_suite(params['manifest'])
    run = Run(ctx, params['out'])
    flow_cfg, smooth_cfg = _config(FlowConfig, params), _config(SmoothConfig, params)
    detect_cfg, mask_cfg = _config(DetectConfig, params), _config(MaskConfig, params)
    with _stage('eval'):
        report = eval_detection(specs, run.seed, flow_cfg, smooth_cfg, detect_cfg, mask_cfg)
    write_json(report.to_dict(), run.path('report.json'))
    header, rows = report.table()
    write_csv(header, rows, run.path('report.csv'))
    run.record(flow=flow_cfg, smooth=smooth_cfg, detect=detect_cfg, mask=mask_cfg)
    run.finish()


@main.command()
@run_options
@click.option('--ratios', type=CommaList(float), default=_default(SweepConfig, 'ratios'), show_default=True,
              help='Inside ratios to sweep.')
@click.option('--mask-ratio', 'fixed_overall', type=float, default=_default(SweepConfig, 'fixed_overall'),
              show_default=True, help='Overall masking ratio held fixed across the sweep.')
@click.option('--mode', type=click.Choice(['motion', 'tube', 'patch']), default=_default(SweepConfig, 'mode'),
              show_default=True)
@box_source_option
@click.option('--steps', type=int, default=_default(SweepConfig, 'steps'), show_default=True)
@click.option('--heldout', type=int, default=_default(SweepConfig, 'heldout'), show_default=True,
              help='Held-out clips generated when no held-out manifest is given.')
@click.option('--train-clips', type=int, default=8, show_default=True,
              help='Training clips generated when no manifest is given.')
@click.option('--manifest', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Training scenes (default: a generated suite).')
@click.option('--heldout-manifest', type=click.Path(exists=True, dir_okay=False), default=None,
              help='Held-out scenes (default: a generated suite).')
@net_options
@click.pass_context
def sweep(ctx, **params):
    """Held-out reconstruction loss as a function of the inside ratio."""
    run = Run(ctx, params['out'])
    cfg = _config(SweepConfig, params)
    net_cfg = _config(NetConfig, params)
    opt_cfg = _config(OptimizerConfig, params, steps=cfg.steps)
    if params['manifest']:
        train_specs = _load_suite(params['manifest'])
    else:
        train_specs = micro_suite(params['train_clips'], derive_seed(run.seed, 'train-suite'), net_cfg)
    if params['heldout_manifest']:
        heldout_specs = _load_suite(params['heldout_manifest'])
    else:
        heldout_specs = micro_suite(cfg.heldout, derive_seed(run.seed, 'heldout-suite'), net_cfg)
    with _stage('sweep'):
        report = sweep_inside_ratio(train_specs, heldout_specs, cfg, run.seed, net_cfg, opt_cfg)
    header, rows = report.table()
    write_csv(header, rows, run.path('sweep.csv'))
    write_json(report.to_dict(), run.path('sweep.json'))
    run.record(sweep=cfg, net=net_cfg, optimizer=opt_cfg)
    run.finish()


@main.command()
@run_options
@click.option('--kind', type=click.Choice(['detection', 'direction', 'micro']), default='detection',
              show_default=True)
@click.option('--count', type=int, default=20, show_default=True)
@click.option('--velocity', type=float, default=2.0, show_default=True, help='Sprite speed in px/frame.')
@click.option('--pan', type=CommaList(float, 2), default='0.0,0.0', show_default=True,
              help='Camera pan px,py per frame (detection suites).')
@click.option('--noise', 'noise_sigma', type=float, default=0.0, show_default=True)
@click.option('--size', type=int, default=96, show_default=True, help='Frame size of detection suites.')
@net_options
@click.pass_context
def suite(ctx, **params):
    """Generate a scene manifest for eval, pretrain, finetune or sweep."""
    if params['count'] < 1:
        raise click.UsageError("--count must be at least 1")
    run = Run(ctx, params['out'])
    net_cfg = _config(NetConfig, params)
    seed = derive_seed(run.seed, 'suite')
    with _stage('suite'):
        if params['kind'] == 'detection':
            specs = detection_suite(params['count'], seed, params['velocity'], params['pan'], params['size'],
                                    noise_sigma=params['noise_sigma'])
        elif params['kind'] == 'direction':
            specs = direction_suite(params['count'], seed, net_cfg, speed=params['velocity'])
        else:
            specs = micro_suite(params['count'], seed, net_cfg)
    write_json([s.model_dump() for s in specs], run.path('suite.json'))
    run.record(net=net_cfg)
    run.finish()


def replay_args(command: click.Command, params: Dict) -> List[str]:
    """Command-line arguments that reproduce params for command."""
    args = []
    for param in command.params:
        if not isinstance(param, click.Option) or param.name not in params:
            continue
        value = params[param.name]
        if param.is_flag:
            if param.secondary_opts:
                args.append(param.opts[0] if value else param.secondary_opts[0])
            elif value:
                args.append(param.opts[0])
        elif value is not None:
            args.extend([param.opts[0], _joined(value) if isinstance(value, (list, tuple)) else str(value)])
    return args


@main.command()
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False))
@click.option('--out', type=click.Path(file_okay=False), default=None,
              help='Write the rerun here instead of the recorded directory.')
@click.pass_context
def replay(ctx, manifest: str, out: Optional[str]):
    """Rerun a recorded invocation from its run manifest."""
    try:
        recorded = RunConfig(**load_json(manifest))
    except (TypeError, ValidationError) as e:
        raise click.UsageError(f"invalid run manifest {manifest}: {e}") from e
    command = main.commands.get(recorded.subcommand)
    if command is None or command.name == 'replay':
        raise click.UsageError(f"cannot replay subcommand '{recorded.subcommand}'")
    if recorded.version != __version__:
        logger.warning("manifest was written by mofo %s, replaying with %s", recorded.version, __version__)
    params = dict(recorded.params)
    if out is not None:
        params['out'] = out
    args = replay_args(command, params)
    logger.info("replaying %s %s", command.name, ' '.join(args))
    with command.make_context(command.name, args, parent=ctx.parent) as sub_ctx:
        command.invoke(sub_ctx)


if __name__ == '__main__':
    main(prog_name='mofo')
