/*
 * Copyright 2026 The gridgnn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Umbrella header for the gridgnn library.

#include "gridgnn/activations.hpp"
#include "gridgnn/checkpoint.hpp"
#include "gridgnn/error.hpp"
#include "gridgnn/eval.hpp"
#include "gridgnn/graph.hpp"
#include "gridgnn/graph_ops.hpp"
#include "gridgnn/model.hpp"
#include "gridgnn/normalizer.hpp"
#include "gridgnn/physics.hpp"
#include "gridgnn/sim.hpp"
#include "gridgnn/tensor.hpp"
#include "gridgnn/train.hpp"
#include "gridgnn/util.hpp"
