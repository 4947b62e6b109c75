from importlib import import_module
from pathlib import Path
from pkgutil import iter_modules

from .__main__ import main
from .config import RunConfig, load_config
from .errors import FlonavError

# Automatically load all modules in the `flonav` package,
# so all flonav commands will auto-register themselves:
package_dir = Path(__file__).resolve().parent
for _, module_name, _ in iter_modules([str(package_dir)]):  # type: ignore
    if module_name == "__main__":
        continue
    import_module(f"{__name__}.{module_name}")
