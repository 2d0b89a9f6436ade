# Tests package for mb-trajectory-smoother
