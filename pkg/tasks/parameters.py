# tasks/parameters.py

import hashlib
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from autodiff.tensor import Tensor
from utils.records import decode_parameter_blob, encode_parameter_blob


@dataclass(frozen=True)
class ModelParameters:
    """
    Named leaf tensors of one task model.

    ``version`` is stamped when a snapshot is refreshed; optimizer steps keep
    the version and replace the tensors.
    """

    tensors: Dict[str, Tensor] = field(default_factory=dict)
    version: int = 0

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], version: int = 0, trainable: bool = True) -> "ModelParameters":
        return cls({name: Tensor(value, requires_grad=trainable, name=name) for name, value in arrays.items()}, version)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def names(self):
        return sorted(self.tensors)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: self.tensors[name].data for name in self.names()}

    def with_tensors(self, tensors: Mapping[str, Tensor]) -> "ModelParameters":
        return ModelParameters(dict(tensors), self.version)

    def refreshed(self) -> "ModelParameters":
        return ModelParameters(dict(self.tensors), self.version + 1)

    def frozen(self) -> "ModelParameters":
        """Same values as constants: forward passes record nothing on a tape."""
        return ModelParameters.from_arrays(self.arrays(), self.version, trainable=False)

    def count(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def to_blob(self, task_id: str) -> bytes:
        return encode_parameter_blob(task_id, self.version, self.arrays())

    @classmethod
    def from_blob(cls, blob: bytes, trainable: bool = False):
        task_id, version, arrays = decode_parameter_blob(blob)
        return task_id, cls.from_arrays(arrays, version, trainable)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for name in self.names():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        return digest.hexdigest()

    def gradient_norm(self, grads: Mapping[str, np.ndarray]) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values())))
