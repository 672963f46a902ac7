#pragma once

#include "adaresnet/analysis.hpp"
#include "adaresnet/autograd.hpp"
#include "adaresnet/checkpoint.hpp"
#include "adaresnet/data.hpp"
#include "adaresnet/errors.hpp"
#include "adaresnet/experiment.hpp"
#include "adaresnet/io.hpp"
#include "adaresnet/nn.hpp"
#include "adaresnet/optim.hpp"
#include "adaresnet/random.hpp"
#include "adaresnet/tensor.hpp"
