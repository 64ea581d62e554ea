from shared.checkpoint import save_checkpoint
from shared.config import logger
from shared.data import load_dataset
from shared.dispatcher import RunContext, Router
from shared.pipeline import train_model

train_router = Router('train')


# Обробник команди train: навчання з нуля, чекпоінт та журнал епох
@train_router.command('train', help='train the model and write a checkpoint plus JSON-lines log')
def train_handler(context: RunContext):
    dataset = load_dataset(context.path('dataset_dir'))
    log_path = context.reports_dir / 'train_log.jsonl'
    model = train_model(context.config, dataset, log_path=log_path)
    save_checkpoint(model, context.path('checkpoint'))
    logger.info(f"train: журнал {log_path}, чекпоінт {context.path('checkpoint')}")
