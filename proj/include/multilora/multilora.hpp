// SPDX-License-Identifier: Apache-2.0
#pragma once

// Core library, one include. The HTTP layer lives in multilora/server.hpp and
// is pulled in only by binaries that actually serve.

#include "multilora/adapter.hpp"
#include "multilora/bank.hpp"
#include "multilora/config.hpp"
#include "multilora/engine.hpp"
#include "multilora/error.hpp"
#include "multilora/lora.hpp"
#include "multilora/matrix.hpp"
#include "multilora/registry.hpp"
#include "multilora/rng.hpp"
#include "multilora/scheduler.hpp"
#include "multilora/serial.hpp"
#include "multilora/toy_model.hpp"
#include "multilora/weights_io.hpp"
