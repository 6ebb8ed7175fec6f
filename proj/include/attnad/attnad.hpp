#ifndef ATTNAD_ATTNAD_HPP
#define ATTNAD_ATTNAD_HPP

#include "attnad/attention.hpp"
#include "attnad/autograd.hpp"
#include "attnad/checkpoint.hpp"
#include "attnad/config.hpp"
#include "attnad/constraints.hpp"
#include "attnad/conv.hpp"
#include "attnad/data.hpp"
#include "attnad/error.hpp"
#include "attnad/image.hpp"
#include "attnad/inference.hpp"
#include "attnad/metrics.hpp"
#include "attnad/model.hpp"
#include "attnad/ops.hpp"
#include "attnad/pipeline.hpp"
#include "attnad/optim.hpp"
#include "attnad/png.hpp"
#include "attnad/tensor.hpp"
#include "attnad/training.hpp"

#endif  // ATTNAD_ATTNAD_HPP
