from . import utils_log
from . import utils_rng
from . import utils_stats
from . import utils_sde
from . import utils_parallel
