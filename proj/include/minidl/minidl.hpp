#pragma once

// Umbrella header for the whole library.

#include "minidl/adam.hpp"
#include "minidl/classifier.hpp"
#include "minidl/config.hpp"
#include "minidl/dataset.hpp"
#include "minidl/errors.hpp"
#include "minidl/gan.hpp"
#include "minidl/gradcam.hpp"
#include "minidl/graph.hpp"
#include "minidl/harness.hpp"
#include "minidl/image.hpp"
#include "minidl/kernels.hpp"
#include "minidl/model.hpp"
#include "minidl/ops.hpp"
#include "minidl/rng.hpp"
#include "minidl/ssim.hpp"
#include "minidl/tensor.hpp"
#include "minidl/toydata.hpp"
