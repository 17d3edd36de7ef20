#pragma once

// Continuous-time dropout for neuron-decomposed controlled ODEs via random
// batch methods: masked forward dynamics, batch-scheme design analysis,
// adjoint-based training under a fixed dropout schedule, particle transport
// of densities, and the closed-form cost-accuracy optimizer.

#include "rbflow/activation.hpp"
#include "rbflow/common.hpp"
#include "rbflow/control.hpp"
#include "rbflow/costmodel.hpp"
#include "rbflow/dataset.hpp"
#include "rbflow/field.hpp"
#include "rbflow/ode.hpp"
#include "rbflow/scheme.hpp"
#include "rbflow/serialize.hpp"
#include "rbflow/train.hpp"
#include "rbflow/transport.hpp"
