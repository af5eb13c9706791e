"""Gaussian scene field: primitive records, array storage, and binary IO.

A field is stored struct-of-arrays for numerics; ``Gaussian`` is the
per-primitive record view. The on-disk layout is documented in
docs/formats.md (magic "IGF1", float32 records, optional "IGFC" classifier
trailer).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidFieldError, InvalidParameterError, VersionError
from .geometry import UNIT_NORM_TOL, quat_normalize, quat_to_matrix

EMBED_DIM = 16  # identity-embedding width; classifier input size must match

FIELD_MAGIC = b"IGF1"
CLASSIFIER_MAGIC = b"IGFC"
_FLOATS_PER_RECORD = 30  # 3 pos + 3 log_scale + 4 quat + 1 opacity + 3 color + 16 embedding
_RECORD_BYTES = _FLOATS_PER_RECORD * 4 + 4  # + uint32 label


@dataclass
class Gaussian:
    """One anisotropic Gaussian primitive."""

    position: np.ndarray  # (3,)
    log_scale: np.ndarray  # (3,) log of per-axis extent
    rotation: np.ndarray  # (4,) unit quaternion wxyz
    opacity_logit: float  # opacity = sigmoid(opacity_logit)
    color: np.ndarray  # (3,) in [0, 1]
    identity_embedding: np.ndarray  # (EMBED_DIM,)
    object_label: int  # 0 = background, k >= 1 = object k

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    @property
    def covariance(self) -> np.ndarray:
        return covariance_from_params(self.log_scale, self.rotation)


@dataclass
class GaussianField:
    """Ordered set of Gaussians with per-primitive instance labels."""

    positions: np.ndarray  # (N, 3)
    log_scales: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray  # (N, 3)
    embeddings: np.ndarray  # (N, EMBED_DIM)
    labels: np.ndarray  # (N,) int32, 0..num_objects
    num_objects: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32)
        self.num_objects = int(self.num_objects)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @staticmethod
    def empty(num_objects: int = 0) -> "GaussianField":
        return GaussianField(
            positions=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            colors=np.zeros((0, 3)),
            embeddings=np.zeros((0, EMBED_DIM)),
            labels=np.zeros(0, dtype=np.int32),
            num_objects=num_objects,
        )

    @staticmethod
    def from_gaussians(gaussians: list[Gaussian], num_objects: int) -> "GaussianField":
        if not gaussians:
            return GaussianField.empty(num_objects)
        return GaussianField(
            positions=np.stack([g.position for g in gaussians]),
            log_scales=np.stack([g.log_scale for g in gaussians]),
            rotations=np.stack([g.rotation for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians]),
            colors=np.stack([g.color for g in gaussians]),
            embeddings=np.stack([g.identity_embedding for g in gaussians]),
            labels=np.array([g.object_label for g in gaussians], dtype=np.int32),
            num_objects=num_objects,
        )

    def gaussian(self, index: int) -> Gaussian:
        return Gaussian(
            position=self.positions[index].copy(),
            log_scale=self.log_scales[index].copy(),
            rotation=self.rotations[index].copy(),
            opacity_logit=float(self.opacity_logits[index]),
            color=self.colors[index].copy(),
            identity_embedding=self.embeddings[index].copy(),
            object_label=int(self.labels[index]),
        )

    def gaussians(self) -> list[Gaussian]:
        return [self.gaussian(i) for i in range(len(self))]

    @property
    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def copy(self) -> "GaussianField":
        return GaussianField(
            self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
            self.opacity_logits.copy(), self.colors.copy(), self.embeddings.copy(),
            self.labels.copy(), self.num_objects,
        )

    def select(self, index: np.ndarray) -> "GaussianField":
        """Subfield at the given indices / boolean mask, order preserved."""
        return GaussianField(
            self.positions[index], self.log_scales[index], self.rotations[index],
            self.opacity_logits[index], self.colors[index], self.embeddings[index],
            self.labels[index], self.num_objects,
        )

    def validate(self) -> None:
        n = len(self)
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "colors", "embeddings"):
            arr = getattr(self, name)
            if arr.shape[0] != n or not np.all(np.isfinite(arr)):
                raise InvalidFieldError(f"field array '{name}' has wrong length or non-finite values")
        if self.embeddings.shape[1] != EMBED_DIM:
            raise InvalidFieldError(f"embeddings must have width {EMBED_DIM}")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
                raise InvalidFieldError("rotation quaternions must be unit within 1e-6")
            if self.labels.min() < 0 or self.labels.max() > self.num_objects:
                raise InvalidFieldError(
                    f"labels must lie in [0, {self.num_objects}], got range "
                    f"[{self.labels.min()}, {self.labels.max()}]"
                )

    def renormalize_rotations(self) -> None:
        self.rotations = quat_normalize(self.rotations)


def covariance_from_params(log_scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """3x3 covariance R diag(exp(2*log_scale)) R^T from factored parameters."""
    log_scale = np.asarray(log_scale, dtype=np.float64)
    if log_scale.shape[-1] != 3 or not np.all(np.isfinite(log_scale)):
        raise InvalidParameterError("log_scale must be a finite 3-vector")
    rot = quat_to_matrix(rotation)  # validates the quaternion
    scaled = rot * np.exp(2.0 * log_scale)[..., None, :]
    return scaled @ np.swapaxes(rot, -1, -2)


def split_field(field: GaussianField) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Partition indices by object label: ({label: indices for labels >= 1}, background indices)."""
    if len(field) and (field.labels.min() < 0 or field.labels.max() > field.num_objects):
        raise InvalidFieldError("field labels out of range for its num_objects")
    foreground = {
        label: np.flatnonzero(field.labels == label)
        for label in range(1, field.num_objects + 1)
    }
    return foreground, np.flatnonzero(field.labels == 0)


@dataclass
class Classifier:
    """Shared affine head mapping identity embeddings to instance logits.

    Only the first ``num_active_classes`` output rows participate in losses
    and argmax; the remaining rows are inert capacity.
    """

    weight: np.ndarray  # (out_features, EMBED_DIM)
    bias: np.ndarray  # (out_features,)
    num_active_classes: int

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise InvalidParameterError("classifier weight/bias shapes disagree")
        if not (0 < self.num_active_classes <= self.weight.shape[0]):
            raise InvalidParameterError("num_active_classes out of range")

    def copy(self) -> "Classifier":
        return Classifier(self.weight.copy(), self.bias.copy(), self.num_active_classes)


def init_classifier(num_active_classes: int, rng: np.random.Generator,
                    out_features: int = 256, in_features: int = EMBED_DIM) -> Classifier:
    return Classifier(
        weight=rng.normal(0.0, 0.02, size=(out_features, in_features)),
        bias=np.zeros(out_features),
        num_active_classes=num_active_classes,
    )


def save_field(field: GaussianField, path: str | Path, classifier: Classifier | None = None) -> None:
    """Write the IGF1 binary layout (optionally with the IGFC classifier trailer)."""
    n = len(field)
    records = np.empty((n, _FLOATS_PER_RECORD), dtype="<f4")
    records[:, 0:3] = field.positions
    records[:, 3:6] = field.log_scales
    records[:, 6:10] = field.rotations
    records[:, 10] = field.opacity_logits
    records[:, 11:14] = field.colors
    records[:, 14:30] = field.embeddings
    labels = field.labels.astype("<u4")

    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", n, field.num_objects))
        interleaved = np.empty((n, _RECORD_BYTES), dtype=np.uint8)
        interleaved[:, : _FLOATS_PER_RECORD * 4] = records.view(np.uint8).reshape(n, -1)
        interleaved[:, _FLOATS_PER_RECORD * 4 :] = labels.view(np.uint8).reshape(n, -1)
        fh.write(interleaved.tobytes())
        if classifier is not None:
            fh.write(CLASSIFIER_MAGIC)
            fh.write(
                struct.pack(
                    "<III",
                    classifier.weight.shape[0],
                    classifier.weight.shape[1],
                    classifier.num_active_classes,
                )
            )
            fh.write(classifier.weight.astype("<f4").tobytes())
            fh.write(classifier.bias.astype("<f4").tobytes())


def load_field(path: str | Path) -> GaussianField:
    field, _ = load_field_with_classifier(path)
    return field


def load_field_with_classifier(path: str | Path) -> tuple[GaussianField, Classifier | None]:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FormatError("file too short for an IGF header", offset=0)
    if raw[:4] != FIELD_MAGIC:
        if raw[:3] == FIELD_MAGIC[:3]:
            raise VersionError(f"unsupported field-format version {raw[3:4]!r}")
        raise FormatError(f"bad magic {raw[:4]!r}, expected {FIELD_MAGIC!r}", offset=0)
    n, num_objects = struct.unpack_from("<II", raw, 4)
    body_end = 12 + n * _RECORD_BYTES
    if len(raw) < body_end:
        found = (len(raw) - 12) // _RECORD_BYTES
        raise FormatError(
            f"truncated field body: expected {n} records, found {found} complete",
            offset=len(raw),
        )
    body = np.frombuffer(raw, dtype=np.uint8, count=n * _RECORD_BYTES, offset=12).reshape(
        n, _RECORD_BYTES
    )
    floats = body[:, : _FLOATS_PER_RECORD * 4].reshape(n, _FLOATS_PER_RECORD, 4)
    floats = np.ascontiguousarray(floats).view("<f4").reshape(n, _FLOATS_PER_RECORD)
    labels = np.ascontiguousarray(body[:, _FLOATS_PER_RECORD * 4 :]).view("<u4").reshape(n)
    field = GaussianField(
        positions=floats[:, 0:3],
        log_scales=floats[:, 3:6],
        rotations=floats[:, 6:10],
        opacity_logits=floats[:, 10],
        colors=floats[:, 11:14],
        embeddings=floats[:, 14:30],
        labels=labels.astype(np.int32),
        num_objects=num_objects,
    )

    classifier = None
    if len(raw) > body_end:
        if raw[body_end : body_end + 4] != CLASSIFIER_MAGIC:
            raise FormatError(
                f"unexpected trailer magic {raw[body_end:body_end + 4]!r}", offset=body_end
            )
        out_f, in_f, active = struct.unpack_from("<III", raw, body_end + 4)
        start = body_end + 16
        need = (out_f * in_f + out_f) * 4
        if len(raw) - start < need:
            raise FormatError("truncated classifier trailer", offset=len(raw))
        weight = np.frombuffer(raw, dtype="<f4", count=out_f * in_f, offset=start)
        bias = np.frombuffer(raw, dtype="<f4", count=out_f, offset=start + out_f * in_f * 4)
        classifier = Classifier(weight.reshape(out_f, in_f), bias, active)
    return field, classifier
