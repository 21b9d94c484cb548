"""Build glue: compile the Rust extension with cargo and ship it inside the
hsflow_lab package. Kept as a setup.py because the extension is produced by
cargo rather than a C compiler."""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CargoExtension(Extension):
    def __init__(self):
        super().__init__("hsflow_lab.hsflow_py", sources=[])


class CargoBuild(build_ext):
    def build_extension(self, ext):
        workspace = Path(__file__).resolve().parent.parent
        subprocess.run(
            ["cargo", "build", "--release", "-p", "hsflow-py"],
            cwd=workspace,
            check=True,
        )
        built = workspace / "target" / "release" / "libhsflow_py.so"
        dest = Path(self.get_ext_fullpath(ext.name))
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copy2(built, dest)


setup(ext_modules=[CargoExtension()], cmdclass={"build_ext": CargoBuild})
