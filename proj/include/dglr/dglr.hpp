#pragma once

#include "dglr/autodiff.hpp"
#include "dglr/checkpoint.hpp"
#include "dglr/common.hpp"
#include "dglr/filter.hpp"
#include "dglr/glrnet.hpp"
#include "dglr/graph.hpp"
#include "dglr/image.hpp"
#include "dglr/kernels.hpp"
#include "dglr/metrics.hpp"
#include "dglr/model.hpp"
#include "dglr/noise.hpp"
#include "dglr/params.hpp"
#include "dglr/patch.hpp"
#include "dglr/qp.hpp"
#include "dglr/synthetic.hpp"
#include "dglr/tensor.hpp"
#include "dglr/train.hpp"
