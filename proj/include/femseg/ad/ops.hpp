#pragma once

#include "femseg/ad/ops_basic.hpp"
#include "femseg/ad/ops_nn.hpp"
