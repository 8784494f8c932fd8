// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "samo/csv.hpp"
#include "samo/error.hpp"
#include "samo/half.hpp"
#include "samo/prune.hpp"
#include "samo/serialize.hpp"
#include "samo/sim.hpp"
#include "samo/store.hpp"
#include "samo/tensor.hpp"
#include "samo/train.hpp"
