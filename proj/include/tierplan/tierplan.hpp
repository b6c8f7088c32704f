/*******************************************************************************
 * Copyright 2026 The tierplan Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *******************************************************************************/
#pragma once

// Everything in one include.
#include "tierplan/allocator.hpp"
#include "tierplan/cache_insertion.hpp"
#include "tierplan/graph_ir.hpp"
#include "tierplan/json_io.hpp"
#include "tierplan/machine.hpp"
#include "tierplan/machine_sim.hpp"
#include "tierplan/memory_analysis.hpp"
#include "tierplan/order_refinement.hpp"
#include "tierplan/pipeline.hpp"
#include "tierplan/presets.hpp"
#include "tierplan/trace.hpp"
#include "tierplan/workloads.hpp"
