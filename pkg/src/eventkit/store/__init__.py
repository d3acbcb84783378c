"""On-disk container: chunked, checksummed columnar storage with index maps."""
from .csv_import import CsvFormatError, import_csv
from .format import ChecksumError, ContainerError
from .maps import TimeIndexMaps
from .reader import GrayFrame, Reader, Slice, open_container
from .writer import DEFAULT_CHUNK_SIZE, Container, write_sequence

open = open_container  # noqa: A001  - module-level alias matching store.open(path)

__all__ = [
    "ChecksumError",
    "Container",
    "ContainerError",
    "CsvFormatError",
    "DEFAULT_CHUNK_SIZE",
    "GrayFrame",
    "Reader",
    "Slice",
    "TimeIndexMaps",
    "import_csv",
    "open",
    "open_container",
    "write_sequence",
]
