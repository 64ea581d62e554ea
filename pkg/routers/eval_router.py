from shared.bench import bench_latency, evaluate, write_ranks_csv
from shared.checkpoint import load_checkpoint
from shared.config import logger
from shared.data import load_dataset
from shared.dispatcher import RunContext, Router
from shared.funcs import save_json

eval_router = Router('eval')

CHECKPOINT_KEYS = {'unpruned': 'checkpoint', 'pruned': 'pruned_checkpoint'}


# Обробник команди eval: MR та Hits@1/3/10 (за замовчуванням фільтровані)
@eval_router.command('eval', help='evaluate link prediction (MR, Hits@1/3/10)', arguments=[
    (('--which',), {'choices': sorted(CHECKPOINT_KEYS), 'default': 'pruned',
                    'help': 'checkpoint to evaluate (default: pruned)'}),
])
def eval_handler(context: RunContext):
    config = context.config
    dataset = load_dataset(context.path('dataset_dir'))
    model = load_checkpoint(context.path(CHECKPOINT_KEYS[context.args.which]))
    report = evaluate(model, dataset, config.eval.split, filtered=config.eval.filtered)
    report.config_hash = context.config_hash
    name = f'eval_{context.args.which}_{config.eval.split}'
    save_json(context.reports_dir / f'{name}.json', report.model_dump(mode='json'))
    if config.eval.write_ranks_csv:
        write_ranks_csv(report, context.reports_dir / f'{name}_ranks.csv')
    logger.info(f"eval: звіт {context.reports_dir / name}.json")


# Обробник команди bench: затримка прямого проходу з прунінгом і без
@eval_router.command('bench', help='benchmark forward latency of pruned vs unpruned checkpoints')
def bench_handler(context: RunContext):
    config = context.config
    unpruned = load_checkpoint(context.path('checkpoint'))
    pruned = load_checkpoint(context.path('pruned_checkpoint'))
    report = bench_latency(unpruned, pruned, config.bench.seq_len, config.bench.reps,
                           warmup=config.bench.warmup, seed=config.train.seed)
    report.config_hash = context.config_hash
    save_json(context.reports_dir / 'latency.json', report.model_dump(mode='json'))
    logger.info(f"bench: прискорення {report.speedup:.3f}x, звіт {context.reports_dir / 'latency.json'}")
