import asyncio
from typing import Callable, TypeVar

from shared.config import logger

T = TypeVar('T')


class TaskManager:
    _instance = None
    _active_tasks: dict = {}   # Активні задачі за назвою варіанта

    def __new__(cls, *args, **kwargs):
        if cls._instance is None:
            cls._instance = super(TaskManager, cls).__new__(cls, *args, **kwargs)
        return cls._instance

    # Функція для запуску сітки незалежних варіантів експерименту (не більше max_parallel одночасно)
    async def run_grid(self, jobs: dict[str, Callable[[], T]], max_parallel: int = 1) -> dict[str, T]:
        semaphore = asyncio.Semaphore(max(1, max_parallel))

        async def run_job(name, job):
            async with semaphore:
                logger.info(f"Запуск варіанта {name}")
                result = await asyncio.to_thread(job)
                logger.info(f"Варіант {name} завершено")
                return result

        self._active_tasks = {name: asyncio.create_task(run_job(name, job)) for name, job in jobs.items()}
        try:
            results = await asyncio.gather(*self._active_tasks.values())
        except BaseException:
            await self.stop_active_tasks()
            raise
        finally:
            self._active_tasks = {}
        return dict(zip(jobs, results))

    # Функція для зупинки задач, що ще не завершились
    async def stop_active_tasks(self):
        for name, task in self._active_tasks.items():
            if task.done():
                continue
            task.cancel()
            try:
                await task
            except asyncio.CancelledError:
                logger.info(f"Варіант {name} скасовано.")
            except Exception as e:
                logger.error(f"Варіант {name} завершився з помилкою під час зупинки: {e}")

    def run(self, jobs: dict[str, Callable[[], T]], max_parallel: int = 1) -> dict[str, T]:
        return asyncio.run(self.run_grid(jobs, max_parallel))
