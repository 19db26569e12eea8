"""Georeferenced rasters, the BSQR file container, polygons, and grid cells.

The on-disk container ("BSQR") is deliberately minimal and bit-exact:

    bytes 0-3    magic ASCII "BSQR"
    bytes 4-7    unsigned 32-bit little-endian header length H
    bytes 8-8+H  UTF-8 JSON header with keys width, height, bands,
                 band_names, geotransform (6 doubles), crs, nodata,
                 dtype (must be "float32")
    remainder    width * height * bands little-endian 32-bit floats,
                 band-sequential, row-major, north-up

The geotransform follows the usual affine convention
(origin_x, pixel_width, 0, origin_y, 0, -pixel_height); pixel (row, col)
has its center at (origin_x + (col + 0.5) * pixel_width,
origin_y + (row + 0.5) * gt[5]).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"BSQR"
DEFAULT_NODATA = -9999.0


class RasterFormatError(Exception):
    """Base error for malformed BSQR containers."""


class BadMagicError(RasterFormatError):
    """File does not start with the BSQR magic."""


class TruncatedPayloadError(RasterFormatError):
    """File ends before the bytes promised by its header."""


class LengthMismatchError(RasterFormatError):
    """Payload section longer than the header-declared pixel count."""


class BadHeaderError(RasterFormatError):
    """Header JSON is malformed or declares unsupported values."""


@dataclass(frozen=True)
class RasterGrid:
    """Immutable multi-band raster; values shaped (bands, height, width), float32."""

    values: np.ndarray
    band_names: tuple
    geotransform: tuple
    crs: str = "EPSG:32618"
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[np.newaxis, :, :]
        if values.ndim != 3:
            raise ValueError(f"values must be 2-D or 3-D, got ndim={values.ndim}")
        values = np.ascontiguousarray(values)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "band_names", tuple(self.band_names))
        object.__setattr__(self, "geotransform", tuple(float(g) for g in self.geotransform))
        object.__setattr__(self, "nodata", float(self.nodata))
        if len(self.band_names) == 0:
            raise ValueError("band_names must not be empty")
        if len(self.band_names) != values.shape[0]:
            raise ValueError(
                f"{len(self.band_names)} band names for {values.shape[0]} bands"
            )
        if len(self.geotransform) != 6:
            raise ValueError("geotransform must have 6 entries")
        if not (self.geotransform[1] > 0 and self.geotransform[5] < 0):
            raise ValueError("raster must be north-up: pixel_width > 0, gt[5] < 0")
        if not np.isfinite(self.nodata):
            raise ValueError("nodata sentinel must be finite")
        bad = ~np.isfinite(values) & (values != np.float32(self.nodata))
        if bad.any():
            raise ValueError("band values must be finite or equal to nodata")

    @property
    def band_count(self):
        return self.values.shape[0]

    @property
    def height(self):
        return self.values.shape[1]

    @property
    def width(self):
        return self.values.shape[2]

    @property
    def pixel_size(self):
        return self.geotransform[1]

    def band(self, name):
        """Return one band as a 2-D read-only view."""
        return self.values[self.band_names.index(name)]

    def pixel_center(self, row, col):
        """CRS coordinates of the center of pixel (row, col)."""
        gt = self.geotransform
        return (gt[0] + (col + 0.5) * gt[1], gt[3] + (row + 0.5) * gt[5])

    def valid_mask(self):
        """Boolean (height, width) array, True where no band is nodata."""
        return ~(self.values == np.float32(self.nodata)).any(axis=0)

    def same_extent(self, other):
        return (
            self.width == other.width
            and self.height == other.height
            and self.geotransform == other.geotransform
        )

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.band_names == other.band_names
            and self.geotransform == other.geotransform
            and self.crs == other.crs
            and self.nodata == other.nodata
            and self.values.shape == other.values.shape
            and np.array_equal(
                self.values.view(np.uint32), other.values.view(np.uint32)
            )
        )


def write_raster(grid, path):
    """Write a RasterGrid to the bit-exact BSQR container."""
    header = {
        "width": grid.width,
        "height": grid.height,
        "bands": grid.band_count,
        "band_names": list(grid.band_names),
        "geotransform": list(grid.geotransform),
        "crs": grid.crs,
        "nodata": grid.nodata,
        "dtype": "float32",
    }
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_raster(path):
    """Read a BSQR container back into a RasterGrid.

    Raises BadMagicError, TruncatedPayloadError, LengthMismatchError or
    BadHeaderError, each for its distinct failure mode.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 8:
        raise TruncatedPayloadError("file ends inside the header-length field")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise TruncatedPayloadError(
            f"header declares {hlen} bytes, only {len(raw) - 8} present"
        )
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeaderError(f"header is not valid JSON: {exc}") from exc
    try:
        width = int(header["width"])
        height = int(header["height"])
        bands = int(header["bands"])
        band_names = [str(n) for n in header["band_names"]]
        geotransform = [float(g) for g in header["geotransform"]]
        crs = str(header["crs"])
        nodata = float(header["nodata"])
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise BadHeaderError(f"header missing or malformed field: {exc}") from exc
    if dtype != "float32":
        raise BadHeaderError(f"unsupported dtype {dtype!r}")
    if width <= 0 or height <= 0 or bands <= 0:
        raise BadHeaderError("width, height and bands must be positive")

    expected = width * height * bands * 4
    payload = raw[8 + hlen :]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload has {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise LengthMismatchError(
            f"payload has {len(payload)} bytes, header promises {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(bands, height, width)
    if (~np.isfinite(values)).any():
        raise BadHeaderError("payload contains non-finite values")
    return RasterGrid(
        values=values,
        band_names=band_names,
        geotransform=geotransform,
        crs=crs,
        nodata=nodata,
    )


@dataclass(frozen=True)
class PolygonSet:
    """Polygons in raster CRS units; each polygon is a list of closed rings."""

    polygons: tuple
    labels: tuple = ()

    def __post_init__(self):
        polys = []
        for rings in self.polygons:
            checked = []
            for ring in rings:
                ring = [(float(x), float(y)) for x, y in ring]
                if len(ring) < 4:
                    raise ValueError("degenerate ring: a closed ring needs >= 4 vertices")
                if ring[0] != ring[-1]:
                    raise ValueError("ring is not closed (first vertex != last)")
                checked.append(tuple(ring))
            polys.append(tuple(checked))
        object.__setattr__(self, "polygons", tuple(polys))
        labels = tuple(self.labels) if self.labels else tuple(
            f"poly_{i}" for i in range(len(polys))
        )
        if len(labels) != len(polys):
            raise ValueError("labels length must match polygon count")
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.polygons)


def _ring_crossings(ring, xs, ys):
    """Even-odd crossing counts for points (xs, ys) against one ring."""
    inside = np.zeros(xs.shape, dtype=np.int64)
    pts = np.asarray(ring, dtype=np.float64)
    x0, y0 = pts[:-1, 0], pts[:-1, 1]
    x1, y1 = pts[1:, 0], pts[1:, 1]
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay > ys) != (by > ys)
        xcross = ax + (ys - ay) * (bx - ax) / (by - ay)
        inside += crosses & (xs < xcross)
    return inside


def rasterize_polygons(polys, grid):
    """0/1 mask over grid pixels whose centers fall inside any polygon.

    Containment uses the even-odd rule on each polygon's rings, so interior
    rings behave as holes. Returns a (height, width) uint8 array.
    """
    mask = np.zeros((grid.height, grid.width), dtype=np.uint8)
    gt = grid.geotransform
    col_x = gt[0] + (np.arange(grid.width) + 0.5) * gt[1]
    row_y = gt[3] + (np.arange(grid.height) + 0.5) * gt[5]
    for rings in polys.polygons:
        all_pts = np.concatenate([np.asarray(r, dtype=np.float64) for r in rings])
        xmin, ymin = all_pts.min(axis=0)
        xmax, ymax = all_pts.max(axis=0)
        cols = np.nonzero((col_x > xmin) & (col_x < xmax))[0]
        rows = np.nonzero((row_y > ymin) & (row_y < ymax))[0]
        if cols.size == 0 or rows.size == 0:
            continue
        xs, ys = np.meshgrid(col_x[cols], row_y[rows])
        crossings = np.zeros(xs.shape, dtype=np.int64)
        for ring in rings:
            crossings += _ring_crossings(ring, xs, ys)
        inside = (crossings % 2).astype(bool)
        sub = mask[np.ix_(rows, cols)]
        mask[np.ix_(rows, cols)] = np.where(inside, 1, sub)
    return mask


@dataclass(frozen=True)
class GridSpec:
    """Square analysis blocks tiling a raster; origin defaults to the raster origin."""

    cell_size: float = 500.0
    origin: tuple | None = None

    def cell_pixels(self, grid):
        px = grid.pixel_size
        ratio = self.cell_size / px
        if self.cell_size <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"cell_size {self.cell_size} is not a positive multiple of pixel size {px}"
            )
        return int(round(ratio))


@dataclass(frozen=True)
class GridCell:
    """Half-open pixel ranges [row0, row1) x [col0, col1) of one block."""

    cell_id: str
    grid_row: int
    grid_col: int
    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def pixel_count(self):
        return (self.row1 - self.row0) * (self.col1 - self.col0)


def make_grid_cells(grid, spec):
    """Tile the raster into cells anchored at its origin; edge cells may be partial."""
    step = spec.cell_pixels(grid)
    cells = []
    n_rows = -(-grid.height // step)
    n_cols = -(-grid.width // step)
    for gr in range(n_rows):
        for gc in range(n_cols):
            cells.append(
                GridCell(
                    cell_id=f"g{gr:03d}_{gc:03d}",
                    grid_row=gr,
                    grid_col=gc,
                    row0=gr * step,
                    row1=min((gr + 1) * step, grid.height),
                    col0=gc * step,
                    col1=min((gc + 1) * step, grid.width),
                )
            )
    return cells


def load_polygons(path):
    """Read a GeoJSON FeatureCollection of Polygons into a PolygonSet."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    polygons, labels = [], []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise ValueError(f"feature {i}: only Polygon geometries are supported")
        rings = [[(float(x), float(y)) for x, y in ring] for ring in geom["coordinates"]]
        props = feat.get("properties") or {}
        labels.append(str(props.get("settlement_id", props.get("id", f"poly_{i}"))))
        polygons.append(rings)
    return PolygonSet(polygons=tuple(polygons), labels=tuple(labels))


def save_polygons(polys, path):
    """Write a PolygonSet as a GeoJSON FeatureCollection."""
    features = []
    for label, rings in zip(polys.labels, polys.polygons):
        features.append(
            {
                "type": "Feature",
                "properties": {"settlement_id": label},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x, y] for x, y in ring] for ring in rings],
                },
            }
        )
    with open(path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)
