#pragma once

#include "kmpc/errors.hpp"
#include "kmpc/dictionary.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/krom.hpp"
#include "kmpc/plant.hpp"
#include "kmpc/box_minimize.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/closed_loop.hpp"
#include "kmpc/io.hpp"
#include "kmpc/experiment.hpp"
