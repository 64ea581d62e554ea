import sys

from routers.data_router import data_router
from routers.train_router import train_router
from routers.prune_router import prune_router
from routers.eval_router import eval_router
from routers.experiment_router import experiment_router
from shared.dispatcher import Dispatcher

dp = Dispatcher()

dp.include_routers(data_router, train_router, prune_router, eval_router, experiment_router)


def main(argv: list[str] | None = None) -> int:
    return dp.run(argv)


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
