#pragma once

#include "xfuse/autograd.hpp"
#include "xfuse/cam.hpp"
#include "xfuse/checkpoint.hpp"
#include "xfuse/config.hpp"
#include "xfuse/data.hpp"
#include "xfuse/decoder.hpp"
#include "xfuse/encoder.hpp"
#include "xfuse/grad_check.hpp"
#include "xfuse/image_io.hpp"
#include "xfuse/layers.hpp"
#include "xfuse/losses.hpp"
#include "xfuse/metrics.hpp"
#include "xfuse/model.hpp"
#include "xfuse/ops.hpp"
#include "xfuse/optim.hpp"
#include "xfuse/parallel.hpp"
#include "xfuse/pipeline.hpp"
#include "xfuse/tensor.hpp"
#include "xfuse/trainer.hpp"
#include "xfuse/verify.hpp"
