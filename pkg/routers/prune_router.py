from shared.checkpoint import load_checkpoint, save_checkpoint
from shared.config import logger
from shared.data import load_dataset
from shared.dispatcher import RunContext, Router
from shared.funcs import save_json, write_csv
from shared.numerics import SeededRng
from shared.pipeline import prune_pipeline
from shared.pruning import profile_attention_similarity

prune_router = Router('prune')


def write_profile(context: RunContext, profile) -> None:
    save_json(context.reports_dir / 'profile.json', {**profile.to_json(), 'config_hash': context.config_hash})
    write_csv(context.reports_dir / 'profile.csv', ['layer', 'similarity'], enumerate(profile.similarities))


# Обробник команди profile: косинусна подібність входу/виходу уваги по шарах
@prune_router.command('profile', help='profile per-layer attention input/output similarity')
def profile_handler(context: RunContext):
    config = context.config
    dataset = load_dataset(context.path('dataset_dir'))
    model = load_checkpoint(context.path('checkpoint'))
    rng = SeededRng(config.train.seed).child('prune').child('profile')
    profile = profile_attention_similarity(model, dataset, config.prune.samples, rng)
    write_profile(context, profile)
    logger.info(f"profile: {len(profile.similarities)} шарів записано до {context.reports_dir}")


# Обробник команди prune: вибір шарів, компенсація W_c знизу вгору, донавчання
@prune_router.command('prune', help='prune redundant attention layers and fit linear compensation')
def prune_handler(context: RunContext):
    config = context.config
    dataset = load_dataset(context.path('dataset_dir'))
    model = load_checkpoint(context.path('checkpoint'))
    profile, plan = prune_pipeline(config, model, dataset, log_path=context.reports_dir / 'finetune_log.jsonl')
    if profile is not None:
        write_profile(context, profile)
    save_json(context.reports_dir / 'plan.json', {**plan.to_json(), 'config_hash': context.config_hash})
    save_checkpoint(model, context.path('pruned_checkpoint'))
    logger.info(f"prune: шари {plan.layers}, чекпоінт {context.path('pruned_checkpoint')}")
