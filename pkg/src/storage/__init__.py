"""Storage package - case, partition and measurement documents"""
