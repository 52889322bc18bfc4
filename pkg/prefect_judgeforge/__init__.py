from prefect_judgeforge._version import __version__  # noqa F401
from prefect_judgeforge.credentials import JudgeCredentials  # noqa F401
