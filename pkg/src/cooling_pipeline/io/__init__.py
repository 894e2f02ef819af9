from . import fbc_config
from . import fbc_output
from . import fbc_snapshot
