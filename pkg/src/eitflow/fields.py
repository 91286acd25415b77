"""Tensor calculus on structured, cell-centered 1D/2D grids.

Fields are plain numpy arrays whose trailing ``grid.ndim`` axes are spatial.
Leading axes hold tensor components:

* scalar: ``(*shape)``
* vector: ``(d, *shape)``
* symmetric 2-tensor, packed: ``(ncomp, *shape)`` with components ``xx`` (1D)
  or ``xx, xy, yy`` (2D)
* general tensor of rank k, full storage: ``(d,)*k + shape``

Derivatives are second-order central differences.  Periodic axes wrap
exactly.  Wall axes either use one-sided second-order stencils at the two
boundary cells, or, when the input carries one ghost layer per wall side
(``padded=True``), plain central differences that read the ghosts.  Filling
the ghosts is the caller's business; :meth:`Grid.pad` offers the reflection
parities the solver needs.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

MIN_EXTENT = 4


class AxisKind(enum.Enum):
    PERIODIC = "periodic"
    WALL = "wall"


class StencilError(ValueError):
    """Raised when a grid is too small for the difference stencils."""


@dataclass(frozen=True)
class Grid:
    """Uniform structured grid with cell-centered samples."""

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    kinds: tuple[AxisKind, ...]
    origin: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        kinds = tuple(AxisKind(k) for k in self.kinds)
        if not 1 <= len(shape) <= 2:
            raise ValueError("only 1D and 2D grids are supported")
        if not len(shape) == len(spacing) == len(kinds):
            raise ValueError("shape, spacing and kinds must have one entry per axis")
        if any(n < MIN_EXTENT for n in shape):
            raise StencilError(f"every axis needs at least {MIN_EXTENT} cells, got {shape}")
        if any(not h > 0 for h in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        origin = (0.0,) * len(shape) if self.origin is None else tuple(float(x) for x in self.origin)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def uniform(cls, n, length=1.0, periodic=True, ndim=None):
        """Square grid with ``n`` cells per axis on ``[0, length)^ndim``."""
        ns = (n,) * (ndim or 1) if np.isscalar(n) else tuple(n)
        ndim = len(ns)
        lengths = (length,) * ndim if np.isscalar(length) else tuple(length)
        flags = (periodic,) * ndim if isinstance(periodic, bool) else tuple(periodic)
        kinds = tuple(AxisKind.PERIODIC if p else AxisKind.WALL for p in flags)
        return cls(ns, tuple(L / m for L, m in zip(lengths, ns)), kinds)

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def lengths(self):
        return tuple(n * h for n, h in zip(self.shape, self.spacing))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def wall_axes(self):
        return tuple(i for i, k in enumerate(self.kinds) if k is AxisKind.WALL)

    @property
    def all_periodic(self):
        return not self.wall_axes

    def axis_coordinates(self, axis):
        n, h, x0 = self.shape[axis], self.spacing[axis], self.origin[axis]
        return x0 + (np.arange(n) + 0.5) * h

    def coordinates(self):
        """Cell-center coordinates, shape ``(d, *shape)``."""
        axes = [self.axis_coordinates(i) for i in range(self.ndim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def integrate(self, f):
        """Cell-sum quadrature over the spatial axes."""
        f = np.asarray(f)
        axes = tuple(range(f.ndim - self.ndim, f.ndim))
        return np.sum(f, axis=axes) * self.cell_volume

    def interior(self, f):
        """Strip the ghost layer from a padded array (no-op on periodic grids)."""
        if self.all_periodic:
            return f
        lead = f.ndim - self.ndim
        index = [slice(None)] * f.ndim
        for ax in self.wall_axes:
            index[lead + ax] = slice(1, -1)
        return f[tuple(index)]

    def pad(self, f, parity="even", rank=None, packed=False):
        """Add one ghost layer on each wall side by reflection.

        ``parity`` is ``"even"`` (copy), ``"odd"`` (negate every component)
        or ``"mirror"`` (a component flips sign once for every index that
        points along the wall normal, as a tensor does under reflection).
        ``rank`` is the number of leading component axes; ``packed`` marks
        a packed symmetric 2-tensor.
        """
        if self.all_periodic:
            return f
        f = np.asarray(f)
        lead = f.ndim - self.ndim if rank is None else (1 if packed else rank)
        widths = [(0, 0)] * f.ndim
        for ax in self.wall_axes:
            widths[lead + ax] = (1, 1)
        out = np.pad(f, widths, mode="symmetric")
        if parity == "even":
            return out
        for ax in self.wall_axes:
            if parity == "odd":
                sign = -np.ones(f.shape[:lead])
            elif parity == "mirror":
                sign = _mirror_signs(f.shape[:lead], ax, packed, self.ndim)
            else:
                raise ValueError(f"unknown parity {parity!r}")
            sign = sign.reshape(sign.shape + (1,) * (self.ndim - 1))
            for side in (0, -1):
                index = [slice(None)] * out.ndim
                index[lead + ax] = side
                out[tuple(index)] *= sign
        return out


def _mirror_signs(component_shape, axis, packed, ndim):
    if packed:
        return np.array([(-1.0) ** ((a == axis) + (b == axis)) for a, b in sym_pairs(ndim)])
    sign = np.ones(component_shape)
    for idx in itertools.product(*(range(n) for n in component_shape)):
        sign[idx] = (-1.0) ** sum(i == axis for i in idx)
    return sign


def sym_pairs(ndim):
    """Index pairs of the packed symmetric components."""
    return [(0, 0)] if ndim == 1 else [(0, 0), (0, 1), (1, 1)]


def sym_to_full(packed, ndim):
    """Expand packed symmetric components to a full ``(d, d, ...)`` array."""
    packed = np.asarray(packed)
    full = np.empty((ndim, ndim) + packed.shape[1:], dtype=packed.dtype)
    for c, (a, b) in enumerate(sym_pairs(ndim)):
        full[a, b] = packed[c]
        full[b, a] = packed[c]
    return full


def full_to_sym(full, ndim):
    """Pack the symmetric part of a full 2-tensor."""
    full = np.asarray(full)
    return np.stack([0.5 * (full[a, b] + full[b, a]) for a, b in sym_pairs(ndim)])


def sym_weights(ndim):
    """Multiplicities of the packed components in a full contraction."""
    return np.array([1.0 if a == b else 2.0 for a, b in sym_pairs(ndim)])


def identity(grid, dtype=float):
    """Full Kronecker delta broadcast to the grid."""
    return np.eye(grid.ndim, dtype=dtype).reshape((grid.ndim, grid.ndim) + (1,) * grid.ndim) * np.ones(grid.shape)


def partial(f, axis, grid, padded=False):
    """Central-difference derivative of every component along ``axis``.

    The result always lives on the interior cells.
    """
    f = np.asarray(f)
    lead = f.ndim - grid.ndim
    ax = lead + axis
    h = grid.spacing[axis]
    if grid.kinds[axis] is AxisKind.PERIODIC:
        out = (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2.0 * h)
    elif padded:
        out = (_take(f, ax, slice(2, None)) - _take(f, ax, slice(None, -2))) / (2.0 * h)
    else:
        out = np.empty_like(f, dtype=np.result_type(f, float))
        _put(out, ax, slice(1, -1), (_take(f, ax, slice(2, None)) - _take(f, ax, slice(None, -2))) / (2.0 * h))
        _put(out, ax, 0, (-3.0 * _take(f, ax, 0) + 4.0 * _take(f, ax, 1) - _take(f, ax, 2)) / (2.0 * h))
        _put(out, ax, -1, (3.0 * _take(f, ax, -1) - 4.0 * _take(f, ax, -2) + _take(f, ax, -3)) / (2.0 * h))
    if padded:
        out = _strip_except(out, grid, lead, axis)
    return out


def _take(f, axis, index):
    sl = [slice(None)] * f.ndim
    sl[axis] = index
    return f[tuple(sl)]


def _put(out, axis, index, value):
    sl = [slice(None)] * out.ndim
    sl[axis] = index
    out[tuple(sl)] = value


def _strip_except(f, grid, lead, keep_axis):
    index = [slice(None)] * f.ndim
    for ax in grid.wall_axes:
        if ax != keep_axis:
            index[lead + ax] = slice(1, -1)
    return f[tuple(index)]


def gradient(f, grid, padded=False):
    """Gradient with the derivative index appended after the component axes.

    For a vector ``u`` the result ``g`` satisfies ``g[a, c] = d u^a / d x^c``.
    """
    f = np.asarray(f)
    lead = f.ndim - grid.ndim
    parts = [partial(f, c, grid, padded) for c in range(grid.ndim)]
    return np.stack(parts, axis=lead)


def divergence(f, grid, padded=False):
    """Contract the derivative with the first component index."""
    f = np.asarray(f)
    if f.ndim - grid.ndim < 1:
        raise ValueError("divergence needs at least one component axis")
    return sum(partial(f[a], a, grid, padded) for a in range(grid.ndim))


def grad_scalar(f, grid, padded=False):
    return gradient(f, grid, padded)


def div_vector(q, grid, padded=False):
    return divergence(q, grid, padded)


def div_tensor(tau, grid, padded=False, packed=None):
    """Divergence of a 2-tensor, ``(div tau)_b = d_a tau^{ab}``.

    Accepts full ``(d, d, ...)`` or packed symmetric storage (detected from the
    leading extent unless ``packed`` is given).
    """
    tau = np.asarray(tau)
    if packed is None:
        packed = tau.ndim - grid.ndim == 1
    if packed:
        tau = sym_to_full(tau, grid.ndim)
    return divergence(tau, grid, padded)


def deformation_rate(u, grid, padded=False, grad_u=None):
    """Symmetrized velocity gradient, packed."""
    g = gradient(u, grid, padded) if grad_u is None else grad_u
    return full_to_sym(g, grid.ndim)


def convective_index_terms(Q, grad_u, rank):
    """Sum over slots r of ``Q`` with its r-th index fed through ``grad u``.

    Returns ``sum_r  Q^{..c..} d_c u^{a_r}`` with ``a_r`` placed in slot r.
    """
    letters = "abcdefgh"[:rank]
    out = 0.0
    for r in range(rank):
        src = letters[:r] + "z" + letters[r + 1:]
        out = out + np.einsum(f"{src}...,{letters[r]}z...->{letters}...", Q, grad_u)
    return out


def truesdell_transport(u, Q, grid, rank, padded=False, grad_u=None, density_weight=1):
    """Non-time part of the Truesdell rate of a rank-k contravariant field.

    Returns ``u.grad Q - sum_r (grad u at slot r) Q + w Q div u`` with
    ``w = density_weight``; all arrays are full storage.  With ``padded``
    the inputs carry wall ghosts and the output is interior.
    """
    if density_weight not in (0, 1):
        raise ValueError(f"density_weight must be 0 or 1, got {density_weight}")
    gu = gradient(u, grid, padded) if grad_u is None else grad_u
    gQ = gradient(Q, grid, padded)
    ui = grid.interior(u) if padded else u
    Qi = grid.interior(Q) if padded else Q
    out = _advect(gQ, ui, rank) - convective_index_terms(Qi, gu, rank)
    if density_weight:
        div_u = np.trace(gu, axis1=0, axis2=1)
        out = out + Qi * div_u
    return out


def _advect(grad_Q, u, rank):
    # grad_Q has the derivative index at position `rank`
    return np.sum(np.moveaxis(grad_Q, rank, 0) * u.reshape(u.shape[:1] + (1,) * rank + u.shape[1:]), axis=0)


def lie_transport_vector_density(u, q, grid, padded=False, grad_u=None, density_weight=1):
    """``L_u q + q div u`` for a vector density ``q``."""
    if density_weight != 1:
        raise ValueError("lie_transport_vector_density expects a density (weight 1)")
    return truesdell_transport(u, q, grid, 1, padded, grad_u)


def lie_transport_tensor_density(u, sigma, grid, padded=False, grad_u=None, density_weight=1):
    """``L_u sigma + sigma div u`` for a packed symmetric tensor density."""
    if density_weight != 1:
        raise ValueError("lie_transport_tensor_density expects a density (weight 1)")
    full = sym_to_full(sigma, grid.ndim)
    return full_to_sym(truesdell_transport(u, full, grid, 2, padded, grad_u), grid.ndim)


def trace(full):
    return np.trace(full, axis1=0, axis2=1)


def dev_iso_split(sigma, ndim):
    """Split packed ``sigma`` into a traceless part and ``p_v = tr(sigma)/d``."""
    sigma = np.asarray(sigma)
    pv = sum(sigma[c] for c, (a, b) in enumerate(sym_pairs(ndim)) if a == b) / ndim
    dev = sigma.copy()
    for c, (a, b) in enumerate(sym_pairs(ndim)):
        if a == b:
            dev[c] = sigma[c] - pv
    return dev, pv


def deviator(full, ndim):
    """Traceless part of a full 2-tensor."""
    iso = trace(full) / ndim
    out = np.array(full, dtype=float, copy=True)
    for a in range(ndim):
        out[a, a] -= iso
    return out


def symmetrize(Q, rank):
    """Average over all index permutations of a full rank-k array."""
    if rank < 2:
        return Q
    perms = list(itertools.permutations(range(rank)))
    tail = tuple(range(rank, Q.ndim))
    return sum(np.transpose(Q, p + tail) for p in perms) / len(perms)


def contract_all(A, B, rank):
    """Full contraction over the first ``rank`` axes."""
    axes = tuple(range(rank))
    return np.sum(A * B, axis=axes)


def contract_tail(A, B, rank):
    """``(A . B)^{ab} = A^{a i..} B^{b i..}``: contract all but the first index."""
    if rank == 1:
        return np.einsum("a...,b...->ab...", A, B)
    letters = "ijklmn"[: rank - 1]
    return np.einsum(f"a{letters}...,b{letters}...->ab...", A, B)


def contract_first_free(A, B, rank_b):
    """``(A . B)^a = A^{a i..} B_{i..}`` with ``A`` of rank ``rank_b + 1``."""
    letters = "ijklmn"[:rank_b]
    return np.einsum(f"a{letters}...,{letters}...->a...", A, B)


def save_snapshot_csv(path, grid, columns: Sequence[tuple[str, np.ndarray]], header=None):
    """Write cell-centered data, one row per cell: coordinates then components.

    Rows are in C order over the grid.  The first line is a format tag.
    """
    coords = grid.coordinates().reshape(grid.ndim, -1)
    names = ["x", "y"][: grid.ndim]
    data = [coords[i] for i in range(grid.ndim)]
    for name, values in columns:
        values = np.asarray(values)
        lead = values.shape[: values.ndim - grid.ndim]
        flat = values.reshape((-1,) + (int(np.prod(grid.shape)),)) if lead else values.reshape(1, -1)
        if not lead:
            names.append(name)
        else:
            for idx in itertools.product(*(range(n) for n in lead)):
                names.append(name + "_" + "".join(str(i) for i in idx))
        data.extend(flat)
    table = np.column_stack(data)
    with open(path, "w") as fh:
        fh.write(f"# eitflow-snapshot v1{'' if header is None else ' ' + header}\n")
        fh.write(",".join(names) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_snapshot_csv(path):
    """Read a snapshot back as ``(tag, column_names, 2D array)``."""
    with open(path) as fh:
        tag = fh.readline().strip()
        names = fh.readline().strip().split(",")
    if not tag.startswith("# eitflow-snapshot v1"):
        raise ValueError(f"{path}: unknown snapshot format tag {tag!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    return tag, names, data
