#pragma once

#include "avsal/audio.hpp"
#include "avsal/checkpoint.hpp"
#include "avsal/config.hpp"
#include "avsal/decoder.hpp"
#include "avsal/enhancement.hpp"
#include "avsal/error.hpp"
#include "avsal/fusion.hpp"
#include "avsal/gradcheck.hpp"
#include "avsal/gradcheck_suite.hpp"
#include "avsal/image_io.hpp"
#include "avsal/loss.hpp"
#include "avsal/metrics.hpp"
#include "avsal/model.hpp"
#include "avsal/module.hpp"
#include "avsal/ops.hpp"
#include "avsal/optim.hpp"
#include "avsal/synthetic.hpp"
#include "avsal/tensor.hpp"
#include "avsal/train.hpp"
#include "avsal/visual_encoder.hpp"
