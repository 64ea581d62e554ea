from shared.bench import EvalReport, attention_flop_ratio, evaluate
from shared.checkpoint import load_checkpoint
from shared.config import logger
from shared.data import MkgDataset, load_dataset
from shared.dispatcher import RunContext, Router
from shared.funcs import save_json, write_csv
from shared.numerics import SeededRng
from shared.pipeline import ABLATION_ROWS, prune_copy, run_variant, train_model, with_flags
from shared.pruning import profile_attention_similarity
from shared.task_manager import TaskManager

experiment_router = Router('experiment')

task_manager = TaskManager()

METRIC_COLUMNS = ['mr', 'hits1', 'hits3', 'hits10']


def format_table(rows: list[tuple[str, EvalReport]]) -> str:
    lines = [f"{'variant':<12} {'MR':>8} {'Hits@1':>8} {'Hits@3':>8} {'Hits@10':>8}"]
    for name, report in rows:
        lines.append(f"{name:<12} {report.mr:>8.2f} {report.hits1:>8.3f} {report.hits3:>8.3f} {report.hits10:>8.3f}")
    return '\n'.join(lines)


def _variant_job(context: RunContext, dataset: MkgDataset, name: str):
    config = with_flags(context.config, ABLATION_ROWS[name])

    def job() -> EvalReport:
        report = run_variant(config, dataset)
        report.config_hash = context.config_hash
        save_json(context.reports_dir / 'ablation' / f'{name}.json', report.model_dump(mode='json'))
        return report
    return job


# Обробник команди ablate: сітка варіантів абляції та порівняльна таблиця
@experiment_router.command('ablate', help='train, prune and evaluate every ablation row')
def ablate_handler(context: RunContext):
    dataset = load_dataset(context.path('dataset_dir'))
    jobs = {name: _variant_job(context, dataset, name) for name in ABLATION_ROWS}
    reports = task_manager.run(jobs, context.config.sweep.max_parallel)

    rows = [(name, reports[name]) for name in ABLATION_ROWS]
    write_csv(context.reports_dir / 'ablation.csv', ['variant', *METRIC_COLUMNS],
              ([name, *report.metrics().values()] for name, report in rows))
    logger.info("Результати абляції:\n" + format_table(rows))


def _sweep_prune(context: RunContext, dataset: MkgDataset) -> None:
    config = context.config
    checkpoint = context.path('checkpoint')
    if checkpoint.is_file():
        model = load_checkpoint(checkpoint)
    else:
        logger.warning(f"Чекпоінт {checkpoint} не знайдено, навчаємо модель для розгортки")
        model = train_model(config, dataset)

    rng = SeededRng(config.train.seed).child('prune').child('profile')
    profile = profile_attention_similarity(model, dataset, config.prune.samples, rng)
    values = config.sweep.k_p_values
    if values is None:
        values = list(range(model.config.n_layers + 1))

    jobs = {}
    for k_p in values:
        def job(k_p=k_p):
            pruned = prune_copy(config, model, dataset, profile, k_p)
            report = evaluate(pruned, dataset, config.eval.split, filtered=config.eval.filtered)
            return report, attention_flop_ratio(model, pruned)
        jobs[str(k_p)] = job
    results = task_manager.run(jobs, config.sweep.max_parallel)

    rows = [[k_p, *results[str(k_p)][0].metrics().values(), results[str(k_p)][1]] for k_p in values]
    path = write_csv(context.reports_dir / 'sweep_prune.csv', ['k_p', *METRIC_COLUMNS, 'attention_flop_ratio'], rows)
    logger.info(f"Розгортка K_p ({len(rows)} точок) записана до {path}")


def _sweep_lr(context: RunContext, dataset: MkgDataset) -> None:
    config = context.config
    grid = config.sweep.lr_grid
    jobs = {str(lr): (lambda lr=lr: run_variant(config, dataset, lr=lr)) for lr in grid}
    results = task_manager.run(jobs, config.sweep.max_parallel)

    rows = [[lr, *results[str(lr)].metrics().values()] for lr in grid]
    path = write_csv(context.reports_dir / 'sweep_lr.csv', ['lr', *METRIC_COLUMNS], rows)
    logger.info(f"Розгортка швидкості навчання ({len(rows)} точок) записана до {path}")


# Обробник команди sweep: чутливість до кількості прунінгованих шарів або до lr
@experiment_router.command('sweep', help='sensitivity sweep over K_p or the learning rate', arguments=[
    (('--kind',), {'choices': ['prune', 'lr'], 'default': 'prune', 'help': 'swept parameter (default: prune)'}),
])
def sweep_handler(context: RunContext):
    dataset = load_dataset(context.path('dataset_dir'))
    if context.args.kind == 'prune':
        _sweep_prune(context, dataset)
    else:
        _sweep_lr(context, dataset)
