from . import fbc_spinSystem
from . import fbc_cfTwa
from . import fbc_krausExact
from . import fbc_npwFilter
from . import fbc_field1d
from . import fbc_spgpe
