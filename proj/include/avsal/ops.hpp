#pragma once

#include "avsal/ops/conv.hpp"
#include "avsal/ops/deform_conv.hpp"
#include "avsal/ops/elementwise.hpp"
#include "avsal/ops/interpolate.hpp"
#include "avsal/ops/linear.hpp"
#include "avsal/ops/norm.hpp"
#include "avsal/ops/shape_ops.hpp"
#include "avsal/tensor.hpp"
