"""Physical fixtures for the three-link sit-to-stand model.

Parameter ordering throughout the package::

    [m1, m2, m3, I1, I2, I3, l1, l2, l3, lc1, lc2, lc3]
"""

import numpy as np

PARAM_NAMES = ("m1", "m2", "m3", "I1", "I2", "I3", "l1", "l2", "l3", "lc1", "lc2", "lc3")
STATE_NAMES = ("theta1", "theta2", "theta3", "omega1", "omega2", "omega3")
INPUT_NAMES = ("tau_h", "tau_s", "F_x", "F_y")
OUTPUT_NAMES = ("x_com", "y_com", "vx_com", "vy_com")
USER_OUTPUT_NAMES = ("theta3", "x_com", "y_com", "omega3", "vx_com", "vy_com")

GRAVITY = 9.81
DEG = np.pi / 180.0

P_NOMINAL = np.array([9.68, 12.59, 44.57, 1.16, 0.52, 2.56, 0.53, 0.41, 0.52, 0.27, 0.21, 0.26])

# +-5 % user weight fluctuation box
P_LOWER = np.array([9.2, 11.2, 42.3, 1.10, 0.49, 2.40, 0.52, 0.39, 0.51, 0.23, 0.17, 0.24])
P_UPPER = np.array([10.2, 13.2, 46.8, 1.21, 0.54, 2.65, 0.54, 0.42, 0.53, 0.30, 0.23, 0.28])

# box extremes with lengths only shifted by 1 mm from nominal
P_LIGHT = np.array([9.2, 11.2, 42.3, 1.10, 0.49, 2.40, 0.529, 0.409, 0.519, 0.23, 0.17, 0.24])
P_HEAVY = np.array([10.2, 13.2, 46.8, 1.21, 0.54, 2.65, 0.531, 0.411, 0.521, 0.30, 0.23, 0.28])

T0 = 0.0
TF = 3.5
STEP = 0.004

X0 = np.array([90.0, -90.0, 90.0, 0.0, 0.0, 0.0]) * DEG

# final z = [theta2, x_com, y_com]
Z_FINAL = np.array([-5.0 * DEG, 0.0, 0.97])

W_U = np.array([1.0, 1.0, 10.0, 1.0])
U_LOWER = np.array([-200.0, -175.0, -40.0, 0.0])
U_UPPER = np.array([200.0, 50.0, 40.0, 650.0])

# abort box for ILC training, degrees and degrees per second
X_LOWER_DEG = np.array([80.0, -120.0, 0.0, -20.0, -5.0, -70.0])
X_UPPER_DEG = np.array([120.0, 0.0, 130.0, 10.0, 60.0, 20.0])
X_LOWER = X_LOWER_DEG * DEG
X_UPPER = X_UPPER_DEG * DEG

T_P = (0.0, 0.875, 1.75, 2.625, 3.5)

Q_STAR = np.array([80.0, 95.0, 95.0, 68.0, 90.0, 83.0])
R_STAR = np.array([1.0e-3, 2.0e-4, 6.0e-4, 4.4e-3])
S_STAR = np.array([30.0, 37.0, 19.0, 29.0, 92.0, 82.0])

# published weights of the robust metric, used only as a magnitude check
W_V_PUBLISHED = np.array([6.98e7, 9.67e-7, 9.71e4])
W_O_PUBLISHED = np.array([1.85e18, 7.24, 1.07e13])

K_ILC_STAR = np.array([
    [-100.6, -53.26, 71.59, -123.9, -208.5, 66.02],
    [57.98, -21.06, -47.92, -24.67, 166.9, -31.92],
    [28.86, 20.20, 139.9, 46.62, -29.75, 123.5],
])
L_ILC_STAR = np.array([
    [-0.6381, 2.376, 46.31, -2.514, -5.255, -28.89],
    [-2.948, -29.34, -25.24, 2.851, -3.559, 24.48],
    [-73.09, -58.25, 114.1, 19.82, 13.09, 126.9],
])

W_MU = 1e-4
RECALL_DECAY = 0.8
RECALL_AMPLITUDE = 0.05
