from shared.config import logger
from shared.data import generate_synthetic_mkg, save_dataset
from shared.dispatcher import RunContext, Router

data_router = Router('data')


# Обробник команди gen-data: генерація та збереження синтетичного графа
@data_router.command('gen-data', help='generate the synthetic multimodal KG')
def gen_data_handler(context: RunContext):
    dataset = generate_synthetic_mkg(context.config.gen)
    directory = save_dataset(dataset, context.path('dataset_dir'))
    logger.info(f"gen-data: набір даних записано до {directory}")
