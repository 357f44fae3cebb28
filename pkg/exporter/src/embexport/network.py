"""VGG-16 (configuration D) face descriptor with named deep-layer taps.

The network takes 224x224 RGB crops. Taps:
  fc6n - pre-activation output of the first fully connected layer (4096)
  fc7n - pre-activation output of the second fully connected layer (4096)
  fc8  - class-score layer output (2622)
"""

import numpy as np
import torch
from torch import nn

CONV_PLAN = [64, 64, "M", 128, 128, "M", 256, 256, 256, "M",
             512, 512, 512, "M", 512, 512, 512, "M"]

LAYER_DIMS = {"fc6n": 4096, "fc7n": 4096, "fc8": 2622}

# Per-channel RGB means subtracted before the first convolution; recorded
# in the export sidecar so downstream users know the exact preprocessing.
MEAN_RGB = (129.1863, 104.7624, 93.5940)


class WeightsError(RuntimeError):
    pass


class FaceDescriptor(nn.Module):
    def __init__(self):
        super().__init__()
        layers = []
        in_ch = 3
        for item in CONV_PLAN:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
            else:
                layers.append(nn.Conv2d(in_ch, item, 3, padding=1))
                layers.append(nn.ReLU(inplace=True))
                in_ch = item
        self.features = nn.Sequential(*layers)
        self.fc6 = nn.Linear(512 * 7 * 7, 4096)
        self.fc7 = nn.Linear(4096, 4096)
        self.fc8 = nn.Linear(4096, 2622)

    def forward(self, x):
        h = self.features(x)
        h = torch.flatten(h, 1)
        fc6n = self.fc6(h)
        fc7n = self.fc7(torch.relu(fc6n))
        fc8 = self.fc8(torch.relu(fc7n))
        return {"fc6n": fc6n, "fc7n": fc7n, "fc8": fc8}


def build_model(weights_path=None, seed=None):
    """Construct the descriptor; load a state dict or seed random init."""
    if seed is not None:
        torch.manual_seed(seed)
    model = FaceDescriptor()
    if weights_path is not None:
        try:
            state = torch.load(weights_path, map_location="cpu",
                               weights_only=True)
        except FileNotFoundError as exc:
            raise WeightsError(f"weights file not found: {weights_path}") from exc
        except Exception as exc:
            raise WeightsError(f"cannot load weights {weights_path}: {exc}") from exc
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise WeightsError(f"weights do not match the network: {exc}") from exc
    model.eval()
    return model


def crop_to_tensor(crop: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 RGB crop -> mean-subtracted float32 CHW tensor."""
    if crop.shape != (224, 224, 3) or crop.dtype != np.uint8:
        raise ValueError(f"expected 224x224x3 uint8 crop, got {crop.shape} {crop.dtype}")
    arr = crop.astype(np.float32) - np.asarray(MEAN_RGB, dtype=np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


@torch.no_grad()
def describe(model, crops, layers):
    """Run the model over uint8 crops; returns {layer: float32 (n, dim)}."""
    batch = torch.stack([crop_to_tensor(c) for c in crops])
    taps = model(batch)
    out = {}
    for layer in layers:
        vals = taps[layer].numpy().astype(np.float32)
        if vals.shape[1] != LAYER_DIMS[layer]:
            raise WeightsError(f"layer {layer} produced dim {vals.shape[1]}, "
                               f"expected {LAYER_DIMS[layer]}")
        out[layer] = vals
    return out
