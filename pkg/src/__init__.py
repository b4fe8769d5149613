"""Multi-crop drought insurance rate-making engine"""
