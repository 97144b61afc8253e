#pragma once

#include "vegas/diffcore/adam.hpp"
#include "vegas/diffcore/gradcheck.hpp"
#include "vegas/diffcore/nn.hpp"
#include "vegas/diffcore/ops.hpp"
#include "vegas/diffcore/param_store.hpp"
#include "vegas/diffcore/tape.hpp"
#include "vegas/diffcore/tensor.hpp"
#include "vegas/parallel.hpp"
#include "vegas/rng.hpp"
