// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "spreadnet/model.hpp"

namespace spreadnet {

/// Saves model weights and batchnorm running statistics to an ESG container:
/// the payload is every parameter tensor concatenated in registration order
/// (header counts 1x1x1x1x1xN), quantized to binary32. The `.meta` sidecar
/// records the model spec (`model.*` keys), per-tensor names and shapes
/// (`param.<i>.*`), and norm-layer state (`norm.<i>.*`).
///
/// Because values are stored as binary32, save -> load -> save reproduces the
/// file byte for byte (float(double(float(x))) == float(x)), but a freshly
/// trained model loses double precision on its first save.
void save_checkpoint(const UNet& model, const std::string& path);

UNet load_checkpoint(const std::string& path);

}  // namespace spreadnet
